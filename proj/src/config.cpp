#include "textcanvas/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>
#include <vector>

#include "textcanvas/errors.hpp"

namespace textcanvas::cli {

namespace {

struct Entry {
  const char* key;
  std::variant<int*, double*, std::string*, std::uint64_t*> slot;
};

std::vector<Entry> entries(RunConfig& c) {
  return {
      {"seed", &c.seed},
      {"out_dir", &c.out_dir},
      {"model.hidden_dim", &c.hidden_dim},
      {"data.image_size", &c.image_size},
      {"data.samples_per_class", &c.samples_per_class},
      {"data.manifest", &c.manifest},
      {"vse.word_dim", &c.word_dim},
      {"vse.enc_channels", &c.enc_channels},
      {"vse.margin", &c.margin},
      {"vse.steps", &c.vse_steps},
      {"vse.batch_size", &c.vse_batch_size},
      {"vse.learning_rate", &c.vse_learning_rate},
      {"vse.checkpoint", &c.vse_checkpoint},
      {"vse.embedding_file", &c.embedding_file},
      {"vse.image_range", &c.image_range},
      {"generator.timesteps", &c.timesteps},
      {"generator.noise_dim", &c.noise_dim},
      {"generator.condition_dim", &c.condition_dim},
      {"generator.patch_size", &c.patch_size},
      {"generator.channels", &c.gen_channels},
      {"discriminator.channels", &c.disc_channels},
      {"training.steps", &c.train_steps},
      {"training.batch_size", &c.batch_size},
      {"training.learning_rate", &c.learning_rate},
      {"training.beta1", &c.beta1},
      {"training.lambda_kl", &c.lambda_kl},
      {"training.checkpoint_every", &c.checkpoint_every},
      {"metrics.splits", &c.splits},
      {"metrics.eval_samples", &c.eval_samples},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void assign(const Entry& entry, const std::string& value, int line_no) {
  auto fail = [&](const char* what) {
    throw ConfigError("config line " + std::to_string(line_no) + ": key '" +
                      entry.key + "' expects " + what + ", got '" + value +
                      "'");
  };
  std::visit(
      [&](auto* slot) {
        using T = std::remove_pointer_t<decltype(slot)>;
        if constexpr (std::is_same_v<T, std::string>) {
          *slot = value;
        } else {
          std::istringstream ss(value);
          T parsed{};
          if (!(ss >> parsed) || !(ss >> std::ws).eof()) {
            if constexpr (std::is_same_v<T, int>) fail("an integer");
            else if constexpr (std::is_same_v<T, std::uint64_t>)
              fail("an unsigned integer");
            else fail("a number");
          }
          *slot = parsed;
        }
      },
      entry.slot);
}

std::string render(const Entry& entry) {
  return std::visit(
      [&](auto* slot) -> std::string {
        using T = std::remove_pointer_t<decltype(slot)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return *slot;
        } else if constexpr (std::is_same_v<T, double>) {
          char buf[64];
          std::snprintf(buf, sizeof(buf), "%.17g", *slot);
          return buf;
        } else {
          return std::to_string(*slot);
        }
      },
      entry.slot);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  auto table = entries(cfg);
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool known = false;
    for (const auto& e : table)
      if (key == e.key) {
        assign(e, value, line_no);
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
  RunConfig& mut = const_cast<RunConfig&>(cfg);
  std::string out;
  for (const auto& e : entries(mut)) {
    out += e.key;
    out += " = ";
    out += render(e);
    out += '\n';
  }
  return out;
}

std::string RunConfig::resolved_vse_checkpoint() const {
  if (!vse_checkpoint.empty()) return vse_checkpoint;
  return (std::filesystem::path(out_dir) / "vse.ckpt").string();
}

void RunConfig::validate() const {
  vse_config(*this).validate();
  generator_config(*this).validate();
  discriminator_config(*this).validate();
  train_config(*this).validate();
  if (manifest.empty()) synth_config(*this).validate();
  if (splits < 1) throw ConfigError("metrics.splits must be >= 1");
  if (eval_samples < splits)
    throw ConfigError("metrics.eval_samples must be >= metrics.splits");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

data::SynthConfig synth_config(const RunConfig& cfg) {
  data::SynthConfig s;
  s.image_size = cfg.image_size;
  s.samples_per_class = cfg.samples_per_class;
  s.seed = cfg.seed;
  return s;
}

vse::VseConfig vse_config(const RunConfig& cfg) {
  vse::VseConfig v;
  v.word_dim = cfg.word_dim;
  v.hidden_dim = cfg.hidden_dim;
  v.image_size = cfg.image_size;
  v.enc_channels = cfg.enc_channels;
  v.margin = cfg.margin;
  v.image_range = cfg.image_range;
  return v;
}

vse::VsePretrainConfig vse_pretrain_config(const RunConfig& cfg) {
  vse::VsePretrainConfig p;
  p.steps = cfg.vse_steps;
  p.batch_size = cfg.vse_batch_size;
  p.learning_rate = cfg.vse_learning_rate;
  return p;
}

generator::GeneratorConfig generator_config(const RunConfig& cfg) {
  generator::GeneratorConfig g;
  g.timesteps = cfg.timesteps;
  g.noise_dim = cfg.noise_dim;
  g.cond_dim = cfg.condition_dim;
  g.hidden_dim = cfg.hidden_dim;
  g.image_size = cfg.image_size;
  g.patch_size = cfg.patch_size;
  g.channels = cfg.gen_channels;
  return g;
}

discriminator::DiscriminatorConfig discriminator_config(const RunConfig& cfg) {
  discriminator::DiscriminatorConfig d;
  d.image_size = cfg.image_size;
  d.hidden_dim = cfg.hidden_dim;
  d.channels = cfg.disc_channels;
  return d;
}

training::TrainConfig train_config(const RunConfig& cfg) {
  training::TrainConfig t;
  t.steps = cfg.train_steps;
  t.batch_size = cfg.batch_size;
  t.learning_rate = cfg.learning_rate;
  t.beta1 = cfg.beta1;
  t.lambda_kl = cfg.lambda_kl;
  t.checkpoint_every = cfg.checkpoint_every;
  return t;
}

}  // namespace textcanvas::cli
