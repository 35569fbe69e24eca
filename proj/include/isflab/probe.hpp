#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "isflab/encoding.hpp"
#include "isflab/model.hpp"
#include "isflab/vocab.hpp"

namespace isflab {

enum class ProbePosition { LastGraphToken, LastQueryToken };

std::string to_string(ProbePosition p);            // "last-graph" | "last-query"
ProbePosition parse_probe_position(std::string_view s);  // ConfigError on anything else

// Row of the probe position inside generation_prefix(s). The last graph token
// sits right before <q>, the last query token right before <a>.
std::size_t probe_index(std::span<const int> prefix, ProbePosition p);

// Node ids concatenated ("2431"). Node ids above 9 are joined with '.', and
// other answer tokens keep their vocab spelling.
std::string answer_label(const Sample& s, const Vocab& vocab);

struct ProbeDump {
  ProbePosition position = ProbePosition::LastGraphToken;
  std::vector<int> layers;                  // 1-based block indices
  std::vector<Eigen::MatrixXf> hidden;      // one (samples x width) matrix per entry of layers
  std::vector<std::string> labels;          // ground truth, one per sample
  std::vector<std::size_t> sample_ids;
  std::string checkpoint_hash;
};

struct CaptureOptions {
  std::vector<int> layers;  // empty = every block
  std::size_t batch = 64;
  int workers = 1;
};

ProbeDump capture(const Transformer<float>& m, const Vocab& vocab, std::span<const Sample> samples, ProbePosition pos,
                  const CaptureOptions& opt = {});

struct KMeansResult {
  std::vector<int> assignment;
  Eigen::MatrixXd centers;
  double inertia = 0;
};

// k-means++ seeding then Lloyd iterations; the best inertia over restarts wins.
KMeansResult kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed, int restarts = 10, int max_iter = 300);

double adjusted_rand_index(std::span<const int> a, std::span<const int> b);
// Mutual information over the arithmetic mean of the two entropies.
double normalized_mutual_info(std::span<const int> a, std::span<const int> b);

struct LayerMetrics {
  int layer = 0;
  double ari = 0;
  double nmi = 0;
};

struct ClusterOptions {
  std::uint64_t seed = 0;
  int restarts = 10;
};

// k = number of distinct labels. Rows are clustered in a canonical order, so
// the result does not depend on sample order or label names.
std::vector<LayerMetrics> cluster_metrics(const ProbeDump& dump, const ClusterOptions& opt = {});

struct Projection {
  Eigen::MatrixXd coords;      // samples x 2
  Eigen::Vector2d explained;   // variance along each axis, non-increasing
  bool degenerate = false;     // rank < 2: the second axis is zero
};

// PCA onto the top two directions. Each axis is flipped so its
// largest-magnitude coordinate is positive.
Projection project2d(const Eigen::MatrixXd& x);

// Layout: layer_<k>.f32bin + layer_<k>.shape (row-major little-endian f32),
// layer_<k>.pca.f32bin + layer_<k>.pca.shape, labels.csv, metrics.csv, meta.json.
void export_dump(const ProbeDump& dump, std::span<const LayerMetrics> metrics, const std::filesystem::path& dir);

struct ProbeExport {
  ProbeDump dump;
  std::vector<LayerMetrics> metrics;
};
ProbeExport read_export(const std::filesystem::path& dir);

}  // namespace isflab
