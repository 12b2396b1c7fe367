#pragma once

#include <json.hpp>
#include <string>

#include "textcanvas/discriminator.hpp"
#include "textcanvas/generator.hpp"
#include "textcanvas/nn.hpp"
#include "textcanvas/vse.hpp"

namespace textcanvas::checkpoint {

using nlohmann::json;

// Binary container: magic, version, JSON meta blob, then named f64 arrays.
// Writing the same params twice produces byte-identical files.

void write_arrays(const std::string& path, const json& meta,
                  const nn::ParamSet& params);

/// Read meta without touching arrays.
json read_meta(const std::string& path);

/// Fill an already-shaped ParamSet by name; throws ConfigMismatch on missing
/// names or shape drift, CorruptFile on a damaged container.
json read_arrays(const std::string& path, const nn::ParamSet& params);

// --- model-level checkpoints --------------------------------------------------

json config_echo(const vse::VseConfig& cfg);
vse::VseConfig vse_config_from(const json& j);

json config_echo(const generator::GeneratorConfig& cfg);
generator::GeneratorConfig generator_config_from(const json& j);

json config_echo(const discriminator::DiscriminatorConfig& cfg);
discriminator::DiscriminatorConfig discriminator_config_from(const json& j);

/// Single-file VSE checkpoint with the vocabulary in the meta.
void save_vse(const std::string& path, vse::VseModel& model);
vse::VseModel load_vse(const std::string& path,
                       const vse::VseConfig* expected = nullptr);

/// Everything sampling needs, self-contained (frozen VSE included).
struct GanModel {
  vse::VseModel text;
  generator::GeneratorConfig gen_cfg;
  generator::GeneratorParams gen;
  discriminator::DiscriminatorConfig disc_cfg;
  discriminator::DiscriminatorParams disc;
  long step = 0;
};

/// Directory layout: <dir>/params.bin + <dir>/config.json echo.
void save_gan(const std::string& dir, GanModel& model);
GanModel load_gan(const std::string& dir,
                  const generator::GeneratorConfig* expected_gen = nullptr);

}  // namespace textcanvas::checkpoint
