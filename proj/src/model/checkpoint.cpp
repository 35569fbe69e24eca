#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "isflab/error.hpp"
#include "isflab/model.hpp"

namespace isflab {
namespace {

constexpr int kFormatVersion = 1;

void write_f32(std::ofstream& out, const Mat<float>& m) {
  std::vector<char> buf(static_cast<std::size_t>(m.size()) * 4);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(m.data()[i]);
    for (int b = 0; b < 4; ++b) buf[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_f32(std::ifstream& in, Mat<float>& m) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(m.size()) * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    m.data()[i] = std::bit_cast<float>(u);
  }
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string model_hash(const Transformer<float>& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : m.parameters()) {
    mix(p.name.data(), p.name.size());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const auto u = std::bit_cast<std::uint32_t>(p.value.data()[i]);
      mix(&u, 4);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::filesystem::path& dir, const Transformer<float>& m, const Vocab& vocab, const CheckpointMeta& meta) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "params", ec);
  if (ec) throw IoError("cannot create " + (dir / "params").string() + ": " + ec.message());
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : m.parameters()) {
    const std::string file = "params/" + p.name + ".f32";
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / file).string());
    write_f32(out, p.value);
    if (!out) throw IoError("write failed for " + (dir / file).string());
    params.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"file", file}});
  }
  const nlohmann::json manifest{{"format", "isflab-checkpoint"},
                                {"version", kFormatVersion},
                                {"config", model_config_to_json(m.config())},
                                {"step", meta.step},
                                {"best_val_loss", finite_or_null(meta.best_val_loss)},
                                {"train_config", meta.train_config},
                                {"rng", meta.rng},
                                {"vocab_hash", vocab.hash()},
                                {"model_hash", model_hash(m)},
                                {"params", params}};
  std::ofstream mo(dir / "manifest.json");
  if (!mo) throw IoError("cannot write " + (dir / "manifest.json").string());
  mo << manifest.dump(2) << '\n';
  std::ofstream vo(dir / "vocab.json");
  if (!vo) throw IoError("cannot write " + (dir / "vocab.json").string());
  vo << vocab.to_json().dump(2) << '\n';
  if (!mo || !vo) throw IoError("write failed in " + dir.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  auto read_json = [&](const std::string& name) {
    std::ifstream in(dir / name);
    if (!in) throw IoError("cannot open " + (dir / name).string());
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError((dir / name).string() + ": " + e.what());
    }
  };
  const auto manifest = read_json("manifest.json");
  if (manifest.value("format", "") != "isflab-checkpoint") throw ValidationError(dir.string() + " is not a checkpoint");
  Vocab vocab = Vocab::from_json(read_json("vocab.json"));
  if (manifest.at("vocab_hash").get<std::string>() != vocab.hash()) throw ValidationError(dir.string() + ": vocab hash mismatch");
  Transformer<float> model(model_config_from_json(manifest.at("config")), 0);
  const auto& entries = manifest.at("params");
  if (entries.size() != model.parameters().size()) throw ValidationError(dir.string() + ": parameter count mismatch");
  for (const auto& e : entries) {
    auto& p = model.param(e.at("name").get<std::string>());
    const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
      throw ValidationError(dir.string() + ": shape mismatch for " + p.name);
    }
    const auto path = dir / e.at("file").get<std::string>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (std::filesystem::file_size(path) != static_cast<std::uintmax_t>(p.value.size()) * 4) {
      throw ValidationError(path.string() + ": blob size does not match shape");
    }
    read_f32(in, p.value);
  }
  CheckpointMeta meta;
  meta.step = manifest.value("step", std::size_t{0});
  meta.best_val_loss = manifest.at("best_val_loss").is_null() ? std::nan("") : manifest["best_val_loss"].get<double>();
  meta.train_config = manifest.value("train_config", nlohmann::json::object());
  meta.rng = manifest.value("rng", nlohmann::json::object());
  return {std::move(model), std::move(vocab), std::move(meta)};
}

}  // namespace isflab
