#include "textcanvas/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "textcanvas/errors.hpp"

namespace textcanvas::checkpoint {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CorruptFile("checkpoint truncated");
  return v;
}

std::ifstream open_checked(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptFile("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw CorruptFile("bad checkpoint magic in " + path);
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion)
    throw CorruptFile("unsupported checkpoint version in " + path);
  return in;
}

json read_meta_stream(std::istream& in) {
  const auto len = get<std::uint64_t>(in);
  std::string buf(len, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(len));
  if (!in) throw CorruptFile("checkpoint meta truncated");
  json meta = json::parse(buf, nullptr, false);
  if (meta.is_discarded()) throw CorruptFile("checkpoint meta is not JSON");
  return meta;
}

}  // namespace

void write_arrays(const std::string& path, const json& meta,
                  const nn::ParamSet& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorruptFile("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  put(out, kVersion);
  const std::string blob = meta.dump();
  put(out, static_cast<std::uint64_t>(blob.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  put(out, static_cast<std::uint64_t>(params.size()));
  for (const auto& [name, m] : params.items) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint64_t>(m->rows()));
    put(out, static_cast<std::uint64_t>(m->cols()));
    out.write(reinterpret_cast<const char*>(m->data()),
              static_cast<std::streamsize>(sizeof(double) * m->size()));
  }
  if (!out) throw CorruptFile("short write on checkpoint: " + path);
}

json read_meta(const std::string& path) {
  std::ifstream in = open_checked(path);
  return read_meta_stream(in);
}

json read_arrays(const std::string& path, const nn::ParamSet& params) {
  std::ifstream in = open_checked(path);
  json meta = read_meta_stream(in);
  const auto count = get<std::uint64_t>(in);
  if (count != params.size())
    throw ConfigMismatch("checkpoint holds " + std::to_string(count) +
                         " arrays, expected " + std::to_string(params.size()));
  for (std::size_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = static_cast<Index>(get<std::uint64_t>(in));
    const auto cols = static_cast<Index>(get<std::uint64_t>(in));
    if (!in) throw CorruptFile("checkpoint truncated in array header");
    if (name != params.items[i].first)
      throw ConfigMismatch("checkpoint array '" + name + "' where '" +
                           params.items[i].first + "' was expected");
    Matd& m = *params.items[i].second;
    if (rows != m.rows() || cols != m.cols())
      throw ConfigMismatch("checkpoint array '" + name + "' is " +
                           std::to_string(rows) + "x" + std::to_string(cols) +
                           ", expected " + std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw CorruptFile("checkpoint truncated in array data");
  }
  return meta;
}

// --- config echoes -------------------------------------------------------------

json config_echo(const vse::VseConfig& cfg) {
  return {{"word_dim", cfg.word_dim},       {"hidden_dim", cfg.hidden_dim},
          {"image_size", cfg.image_size},   {"enc_channels", cfg.enc_channels},
          {"margin", cfg.margin},           {"image_range", cfg.image_range}};
}

vse::VseConfig vse_config_from(const json& j) {
  vse::VseConfig cfg;
  cfg.word_dim = j.at("word_dim");
  cfg.hidden_dim = j.at("hidden_dim");
  cfg.image_size = j.at("image_size");
  cfg.enc_channels = j.at("enc_channels");
  cfg.margin = j.at("margin");
  cfg.image_range = j.at("image_range");
  return cfg;
}

json config_echo(const generator::GeneratorConfig& cfg) {
  return {{"timesteps", cfg.timesteps},   {"noise_dim", cfg.noise_dim},
          {"cond_dim", cfg.cond_dim},     {"hidden_dim", cfg.hidden_dim},
          {"image_size", cfg.image_size}, {"patch_size", cfg.patch_size},
          {"channels", cfg.channels}};
}

generator::GeneratorConfig generator_config_from(const json& j) {
  generator::GeneratorConfig cfg;
  cfg.timesteps = j.at("timesteps");
  cfg.noise_dim = j.at("noise_dim");
  cfg.cond_dim = j.at("cond_dim");
  cfg.hidden_dim = j.at("hidden_dim");
  cfg.image_size = j.at("image_size");
  cfg.patch_size = j.at("patch_size");
  cfg.channels = j.at("channels");
  return cfg;
}

json config_echo(const discriminator::DiscriminatorConfig& cfg) {
  return {{"image_size", cfg.image_size},
          {"hidden_dim", cfg.hidden_dim},
          {"channels", cfg.channels},
          {"leak", cfg.leak}};
}

discriminator::DiscriminatorConfig discriminator_config_from(const json& j) {
  discriminator::DiscriminatorConfig cfg;
  cfg.image_size = j.at("image_size");
  cfg.hidden_dim = j.at("hidden_dim");
  cfg.channels = j.at("channels");
  cfg.leak = j.at("leak");
  return cfg;
}

// --- VSE checkpoint ------------------------------------------------------------

void save_vse(const std::string& path, vse::VseModel& model) {
  json meta = {{"format", "textcanvas-vse"},
               {"config", config_echo(model.cfg)},
               {"vocab", model.vocab.tokens}};
  write_arrays(path, meta, model.params.params());
}

vse::VseModel load_vse(const std::string& path, const vse::VseConfig* expected) {
  json meta = read_meta(path);
  if (meta.value("format", "") != "textcanvas-vse")
    throw ConfigMismatch("not a text-encoder checkpoint: " + path);
  vse::VseModel model;
  model.cfg = vse_config_from(meta.at("config"));
  if (expected && config_echo(*expected) != meta.at("config"))
    throw ConfigMismatch("text-encoder config echo does not match: " + path);
  std::vector<std::string> tokens = meta.at("vocab");
  // token list already includes the specials in index order
  model.vocab.tokens = tokens;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i)
    model.vocab.index[tokens[i]] = i;
  Rng dummy(0);
  model.params = vse::VseParams::init(model.cfg, model.vocab.size(), dummy);
  read_arrays(path, model.params.params());
  return model;
}

// --- GAN checkpoint ------------------------------------------------------------

void save_gan(const std::string& dir, GanModel& model) {
  fs::create_directories(dir);
  json meta = {{"format", "textcanvas-gan"},
               {"step", model.step},
               {"config",
                {{"generator", config_echo(model.gen_cfg)},
                 {"discriminator", config_echo(model.disc_cfg)},
                 {"vse", config_echo(model.text.cfg)}}},
               {"vocab", model.text.vocab.tokens}};
  nn::ParamSet all;
  all.merge("vse", model.text.params.params());
  all.merge("gen", model.gen.params());
  all.merge("disc", model.disc.params());
  write_arrays((fs::path(dir) / "params.bin").string(), meta, all);
  std::ofstream echo(fs::path(dir) / "config.json");
  echo << meta.at("config").dump(2) << '\n';
}

GanModel load_gan(const std::string& dir,
                  const generator::GeneratorConfig* expected_gen) {
  const std::string path = (fs::path(dir) / "params.bin").string();
  json meta = read_meta(path);
  if (meta.value("format", "") != "textcanvas-gan")
    throw ConfigMismatch("not a painter checkpoint: " + dir);
  GanModel model;
  const json& cfg = meta.at("config");
  model.gen_cfg = generator_config_from(cfg.at("generator"));
  model.disc_cfg = discriminator_config_from(cfg.at("discriminator"));
  model.text.cfg = vse_config_from(cfg.at("vse"));
  model.step = meta.value("step", 0L);
  if (expected_gen && config_echo(*expected_gen) != cfg.at("generator"))
    throw ConfigMismatch("generator config echo does not match: " + dir);

  std::vector<std::string> tokens = meta.at("vocab");
  model.text.vocab.tokens = tokens;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i)
    model.text.vocab.index[tokens[i]] = i;

  Rng dummy(0);
  model.text.params =
      vse::VseParams::init(model.text.cfg, model.text.vocab.size(), dummy);
  model.gen = generator::GeneratorParams::init(model.gen_cfg, dummy);
  model.disc = discriminator::DiscriminatorParams::init(model.disc_cfg, dummy);
  nn::ParamSet all;
  all.merge("vse", model.text.params.params());
  all.merge("gen", model.gen.params());
  all.merge("disc", model.disc.params());
  read_arrays(path, all);
  return model;
}

}  // namespace textcanvas::checkpoint
