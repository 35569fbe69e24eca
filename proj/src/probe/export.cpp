#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "isflab/error.hpp"
#include "isflab/probe.hpp"

namespace isflab {
namespace {

void write_matrix(const std::filesystem::path& dir, const std::string& stem, const Eigen::MatrixXf& m) {
  const auto bin = dir / (stem + ".f32bin");
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw IoError("cannot write " + bin.string());
  std::vector<char> buf(static_cast<std::size_t>(m.size()) * 4);
  std::size_t at = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto u = std::bit_cast<std::uint32_t>(m(r, c));
      for (int b = 0; b < 4; ++b) buf[at++] = static_cast<char>((u >> (8 * b)) & 0xFF);
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + bin.string());
  const auto shape = dir / (stem + ".shape");
  std::ofstream so(shape);
  if (!so) throw IoError("cannot write " + shape.string());
  so << nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"dtype", "float32"}, {"order", "row-major"}, {"endian", "little"}}.dump()
     << '\n';
  if (!so) throw IoError("write failed for " + shape.string());
}

Eigen::MatrixXf read_matrix(const std::filesystem::path& dir, const std::string& stem) {
  const auto shape_path = dir / (stem + ".shape");
  std::ifstream si(shape_path);
  if (!si) throw IoError("cannot open " + shape_path.string());
  nlohmann::json shape;
  try {
    shape = nlohmann::json::parse(si);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(shape_path.string() + ": " + e.what());
  }
  const auto rows = shape.at("rows").get<Eigen::Index>(), cols = shape.at("cols").get<Eigen::Index>();
  const auto bin = dir / (stem + ".f32bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot open " + bin.string());
  if (std::filesystem::file_size(bin) != static_cast<std::uintmax_t>(rows * cols) * 4) {
    throw ValidationError(bin.string() + ": size does not match " + shape_path.filename().string());
  }
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows * cols) * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  Eigen::MatrixXf m(rows, cols);
  std::size_t at = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(buf[at++]) << (8 * b);
      m(r, c) = std::bit_cast<float>(u);
    }
  }
  return m;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void export_dump(const ProbeDump& dump, std::span<const LayerMetrics> metrics, const std::filesystem::path& dir) {
  if (dump.hidden.size() != dump.layers.size()) throw ValidationError("probe dump has mismatched layers and matrices");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json layers = nlohmann::json::array();
  bool degenerate = false;
  for (std::size_t j = 0; j < dump.layers.size(); ++j) {
    const std::string stem = "layer_" + std::to_string(dump.layers[j]);
    write_matrix(dir, stem, dump.hidden[j]);
    if (dump.hidden[j].rows() >= 3) {
      const Projection p = project2d(dump.hidden[j].cast<double>());
      degenerate = degenerate || p.degenerate;
      write_matrix(dir, stem + ".pca", p.coords.cast<float>());
      layers.push_back({{"layer", dump.layers[j]}, {"explained_variance", {p.explained(0), p.explained(1)}}, {"degenerate", p.degenerate}});
    } else {
      layers.push_back({{"layer", dump.layers[j]}});
    }
  }
  {
    std::ofstream out(dir / "labels.csv");
    if (!out) throw IoError("cannot write " + (dir / "labels.csv").string());
    out << "sample_id,label\n";
    for (std::size_t i = 0; i < dump.labels.size(); ++i) {
      out << (i < dump.sample_ids.size() ? dump.sample_ids[i] : i) << ',' << csv_field(dump.labels[i]) << '\n';
    }
    if (!out) throw IoError("write failed for " + (dir / "labels.csv").string());
  }
  {
    std::ofstream out(dir / "metrics.csv");
    if (!out) throw IoError("cannot write " + (dir / "metrics.csv").string());
    out << "layer,ari,nmi\n";
    for (const auto& m : metrics) out << m.layer << ',' << fmt(m.ari) << ',' << fmt(m.nmi) << '\n';
    if (!out) throw IoError("write failed for " + (dir / "metrics.csv").string());
  }
  const nlohmann::json meta{{"format", "isflab-probe"},
                            {"version", 1},
                            {"position", to_string(dump.position)},
                            {"layers", dump.layers},
                            {"samples", dump.labels.size()},
                            {"width", dump.hidden.empty() ? 0 : dump.hidden[0].cols()},
                            {"checkpoint_hash", dump.checkpoint_hash},
                            {"projection", "pca"},
                            {"projection_degenerate", degenerate},
                            {"layer_info", layers}};
  std::ofstream mo(dir / "meta.json");
  if (!mo) throw IoError("cannot write " + (dir / "meta.json").string());
  mo << meta.dump(2) << '\n';
  if (!mo) throw IoError("write failed for " + (dir / "meta.json").string());
}

ProbeExport read_export(const std::filesystem::path& dir) {
  std::ifstream mi(dir / "meta.json");
  if (!mi) throw IoError("cannot open " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(mi);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError((dir / "meta.json").string() + ": " + e.what());
  }
  if (meta.value("format", "") != "isflab-probe") throw ValidationError(dir.string() + " is not a probe export");
  ProbeExport ex;
  ex.dump.position = parse_probe_position(meta.at("position").get<std::string>());
  ex.dump.layers = meta.at("layers").get<std::vector<int>>();
  ex.dump.checkpoint_hash = meta.value("checkpoint_hash", "");
  for (int l : ex.dump.layers) ex.dump.hidden.push_back(read_matrix(dir, "layer_" + std::to_string(l)));

  std::ifstream li(dir / "labels.csv");
  if (!li) throw IoError("cannot open " + (dir / "labels.csv").string());
  std::string line;
  std::getline(li, line);
  while (std::getline(li, line)) {
    const auto f = csv_split(line);
    if (f.size() != 2) throw ValidationError((dir / "labels.csv").string() + ": malformed row '" + line + "'");
    ex.dump.sample_ids.push_back(std::stoull(f[0]));
    ex.dump.labels.push_back(f[1]);
  }
  for (const auto& h : ex.dump.hidden) {
    if (static_cast<std::size_t>(h.rows()) != ex.dump.labels.size()) throw ValidationError(dir.string() + ": matrix rows differ from label count");
  }

  std::ifstream ci(dir / "metrics.csv");
  if (!ci) throw IoError("cannot open " + (dir / "metrics.csv").string());
  std::getline(ci, line);
  while (std::getline(ci, line)) {
    const auto f = csv_split(line);
    if (f.size() != 3) throw ValidationError((dir / "metrics.csv").string() + ": malformed row '" + line + "'");
    ex.metrics.push_back({std::stoi(f[0]), std::stod(f[1]), std::stod(f[2])});
  }
  return ex;
}

}  // namespace isflab
