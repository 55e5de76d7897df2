#pragma once

#include "dsf/encoder.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace dsf {

inline constexpr int kRefinedEntries = 2 * kScales;

/// Stacking position of a (stream, scale) entry: global 1..4, then local 1..4.
int stacking_index(Stream stream, int scale);
Stream stacking_stream(int index);
int stacking_scale(int index);

/// Softmax of a finite raw vector.
Eigen::VectorXd normalize_weights(const Eigen::VectorXd& raw);

/// Checks the sum-to-one / positivity contract of an effective weight vector.
bool weights_valid(const Eigen::VectorXd& effective, double tolerance = 1e-6);

struct RfamConfig {
  int num_classes = 9;
  int embed = 64;
  int hidden = 128;
};

/// Refined feature adaptive modulation: one learnable softmax-normalized
/// weight per refined map, weighted sum on the stride-2 grid, MLP head.
class Rfam {
 public:
  Rfam(const nn::Scope& scope, const RfamConfig& config);

  struct Output {
    nn::Var logits;     // classes x H x W
    nn::Var pre_head;   // embed x H/2 x W/2 weighted sum
    nn::Var effective;  // 1 x 1 x 8
  };

  /// Uses the module's own normalized weights.
  [[nodiscard]] Output forward(const std::vector<RefinedMap>& refined) const;

  /// Uses caller-supplied effective weights (1 x 1 x 8).
  [[nodiscard]] Output aggregate(const std::vector<RefinedMap>& refined, const nn::Var& effective) const;

  [[nodiscard]] nn::Var effective_weights() const { return ops::softmax_vector(raw_); }
  [[nodiscard]] const nn::Var& raw_weights() const { return raw_; }
  [[nodiscard]] const RfamConfig& config() const { return config_; }

 private:
  RfamConfig config_;
  nn::Var raw_;
  std::vector<nn::Linear> projections_;
  nn::Linear head1_, head2_;
};

Eigen::VectorXd to_vector(const nn::Var& weights);

/// Effective RFaM weights per epoch for one modality.
class WeightTrajectory {
 public:
  struct Entry {
    int epoch = 0;
    Eigen::VectorXd effective;
  };

  explicit WeightTrajectory(Modality modality) : modality_(modality) {}

  /// Appends weights for `epoch`; epochs must strictly increase.
  void record(int epoch, const Eigen::VectorXd& effective);

  [[nodiscard]] Modality modality() const { return modality_; }
  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] const Eigen::VectorXd& final_weights() const;

  /// CSV with header epoch,w_g1,w_g2,w_g3,w_g4,w_l1,w_l2,w_l3,w_l4.
  void write_csv(const std::filesystem::path& path) const;
  static WeightTrajectory read_csv(const std::filesystem::path& path, Modality modality);

 private:
  Modality modality_;
  std::vector<Entry> entries_;
};

std::string weight_csv_header();

}  // namespace dsf
