#include "dsf/rfam.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dsf {

int stacking_index(Stream stream, int scale) {
  if (scale < 1 || scale > kScales) throw std::invalid_argument("scale index out of range: " + std::to_string(scale));
  return (stream == Stream::global ? 0 : kScales) + scale - 1;
}

Stream stacking_stream(int index) { return index < kScales ? Stream::global : Stream::local; }
int stacking_scale(int index) { return index % kScales + 1; }

Eigen::VectorXd normalize_weights(const Eigen::VectorXd& raw) {
  if (raw.size() == 0) throw std::invalid_argument("normalize_weights: empty vector");
  if (!raw.allFinite()) throw std::invalid_argument("normalize_weights: non-finite raw weights");
  Eigen::VectorXd e = (raw.array() - raw.maxCoeff()).exp();
  return e / e.sum();
}

bool weights_valid(const Eigen::VectorXd& effective, double tolerance) {
  return effective.size() > 0 && effective.allFinite() && (effective.array() > 0.0).all() &&
         std::abs(effective.sum() - 1.0) <= tolerance;
}

Eigen::VectorXd to_vector(const nn::Var& weights) {
  return weights.value().data.row(0).transpose().cast<double>();
}

Rfam::Rfam(const nn::Scope& scope, const RfamConfig& config) : config_(config) {
  raw_ = scope.registry.create(scope.name("weights"), scope.init.constant(1, 1, kRefinedEntries, 0));
  for (int k = 0; k < kRefinedEntries; ++k) {
    const std::string name = "proj_" + std::string(stacking_stream(k) == Stream::global ? "g" : "l") +
                             std::to_string(stacking_scale(k));
    projections_.emplace_back(scope.sub(name), 2, config.embed, 1.0F / std::sqrt(2.0F));
  }
  head1_ = nn::Linear(scope.sub("head1"), config.embed, config.hidden,
                      1.0F / std::sqrt(static_cast<float>(config.embed)));
  head2_ = nn::Linear(scope.sub("head2"), config.hidden, config.num_classes,
                      1.0F / std::sqrt(static_cast<float>(config.hidden)));
}

Rfam::Output Rfam::forward(const std::vector<RefinedMap>& refined) const {
  return aggregate(refined, effective_weights());
}

Rfam::Output Rfam::aggregate(const std::vector<RefinedMap>& refined, const nn::Var& effective) const {
  if (refined.size() != static_cast<std::size_t>(kRefinedEntries)) {
    throw std::invalid_argument("RFaM expects 8 refined maps, got " + std::to_string(refined.size()));
  }
  std::array<const RefinedMap*, kRefinedEntries> ordered{};
  for (const auto& r : refined) {
    const int k = stacking_index(r.stream, r.scale);
    if (ordered[static_cast<std::size_t>(k)] != nullptr) {
      throw std::invalid_argument("RFaM received duplicate entry " + to_string(r.stream) + std::to_string(r.scale));
    }
    ordered[static_cast<std::size_t>(k)] = &r;
  }
  // Common grid is the stride-2 (scale 1) resolution.
  const int grid_h = ordered[0]->values.height();
  const int grid_w = ordered[0]->values.width();
  std::vector<nn::Var> projected;
  projected.reserve(kRefinedEntries);
  for (int k = 0; k < kRefinedEntries; ++k) {
    const auto& entry = *ordered[static_cast<std::size_t>(k)];
    if (entry.values.channels() != 2) throw std::invalid_argument("refined map must have 2 channels");
    const nn::Var up = ops::resize_bilinear(entry.values, grid_h, grid_w);
    projected.push_back(projections_[static_cast<std::size_t>(k)](up));
  }
  Output out;
  out.effective = effective;
  out.pre_head = ops::weighted_sum(projected, effective);
  const nn::Var hidden = ops::gelu(head1_(out.pre_head));
  out.logits = ops::resize_bilinear(head2_(hidden), 2 * grid_h, 2 * grid_w);
  return out;
}

std::string weight_csv_header() { return "epoch,w_g1,w_g2,w_g3,w_g4,w_l1,w_l2,w_l3,w_l4"; }

void WeightTrajectory::record(int epoch, const Eigen::VectorXd& effective) {
  if (!entries_.empty() && epoch <= entries_.back().epoch) {
    throw std::invalid_argument("weight trajectory epochs must increase: got " + std::to_string(epoch) +
                                " after " + std::to_string(entries_.back().epoch));
  }
  if (effective.size() != kRefinedEntries) throw std::invalid_argument("weight trajectory entries need 8 weights");
  if (!weights_valid(effective)) throw std::invalid_argument("weight trajectory entry is not a valid distribution");
  entries_.push_back({epoch, effective});
}

const Eigen::VectorXd& WeightTrajectory::final_weights() const {
  if (entries_.empty()) throw std::logic_error("weight trajectory is empty");
  return entries_.back().effective;
}

void WeightTrajectory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << weight_csv_header() << '\n';
  char buf[64];
  for (const auto& e : entries_) {
    out << e.epoch;
    for (Eigen::Index i = 0; i < e.effective.size(); ++i) {
      std::snprintf(buf, sizeof(buf), ",%.17g", e.effective[i]);
      out << buf;
    }
    out << '\n';
  }
}

WeightTrajectory WeightTrajectory::read_csv(const std::filesystem::path& path, Modality modality) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trajectory " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != weight_csv_header()) {
    throw std::runtime_error(path.string() + ": unexpected trajectory header");
  }
  WeightTrajectory t(modality);
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 1 + kRefinedEntries) {
      throw std::runtime_error(path.string() + ": row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " columns");
    }
    Eigen::VectorXd w(kRefinedEntries);
    for (int k = 0; k < kRefinedEntries; ++k) w[k] = std::stod(cells[static_cast<std::size_t>(k + 1)]);
    t.record(std::stoi(cells[0]), w);
  }
  return t;
}

}  // namespace dsf
