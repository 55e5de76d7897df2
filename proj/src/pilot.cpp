#include "dsf/pilot.hpp"

#include "dsf/metrics.hpp"
#include "dsf/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace dsf {

namespace fs = std::filesystem;

LabelRaster argmax_labels(const nn::Tensor& logits) {
  LabelRaster out(logits.height, logits.width);
  for (Eigen::Index p = 0; p < logits.data.cols(); ++p) {
    Eigen::Index best = 0;
    logits.data.col(p).maxCoeff(&best);
    out.data()[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::function<double(const std::string&)> weight_lr_hook(double scale) {
  return [scale](const std::string& name) {
    const bool modulation = name.ends_with("rfam.weights") || name == "mraf.weights" || name.ends_with(".mraf.weights");
    return modulation ? scale : 1.0;
  };
}

double shannon_entropy(const Eigen::VectorXd& weights) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) > 0.0) h -= weights(i) * std::log(weights(i));
  }
  return h;
}

namespace {

double validation_miou(const BranchModel& model, const std::vector<TrainingSample>& samples,
                       const std::vector<std::size_t>& indices, Modality modality, int num_classes) {
  const NoGradGuard no_grad;
  metrics::ConfusionMatrix cm(num_classes);
  for (const auto i : indices) {
    const auto& s = samples[i];
    const auto out = model.forward(modality == Modality::ir ? s.infrared : s.visible_luma);
    cm.add(argmax_labels(out.segmentation.logits.value()), s.label);
  }
  if (cm.total() == 0) return 0.0;
  return metrics::seg_scores(cm).miou;
}

}  // namespace

PilotResult run_pilot(Modality modality, const std::vector<TrainingSample>& samples, const PilotConfig& config,
                      const fs::path& out_dir, const PilotObserver& observer) {
  if (samples.empty()) throw std::invalid_argument("pilot needs at least one labelled sample");
  if (config.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (config.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(config.lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  fs::create_directories(out_dir);

  BranchModel model(modality, config.num_classes, config.seed, config.streams);
  Adam adam(model.parameters(), {config.lr}, weight_lr_hook(config.weight_lr_scale));
  const HoldoutSplit split = holdout_split(samples.size(), config.val_fraction, config.seed);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  PilotResult result;
  result.trajectory = WeightTrajectory(modality);
  result.checkpoint = out_dir / ("branch_" + to_string(modality) + ".ckpt");
  result.trajectory_csv = out_dir / ("weights_" + to_string(modality) + ".csv");

  auto save = [&] { Checkpoint::capture(model.parameters(), model.meta()).save(result.checkpoint); };
  if (config.epochs == 0) save();

  result.best_miou = -1.0;
  std::vector<std::size_t> order = split.train;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto inv = static_cast<float>(1.0 / static_cast<double>(end - start));
      model.parameters().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = samples[order[k]];
        const auto out = model.forward(modality == Modality::ir ? s.infrared : s.visible_luma);
        const auto loss = losses::ohem_ce(out.segmentation.logits, s.label, config.ohem);
        loss_sum += static_cast<double>(loss.value().data(0, 0));
        backward(ops::scale(loss, inv));
      }
      clip_grad_norm(model.parameters(), config.clip_norm);
      adam.step();
    }
    const Eigen::VectorXd weights = to_vector(model.branch().rfam().effective_weights());
    if (!weights_valid(weights)) throw std::runtime_error("RFaM weights left the simplex at epoch " + std::to_string(epoch));
    result.trajectory.record(epoch, weights);

    const auto& val = split.validation.empty() ? split.train : split.validation;
    const double miou = validation_miou(model, samples, val, modality, config.num_classes);
    if (miou > result.best_miou) {
      result.best_miou = miou;
      result.best_epoch = epoch;
      save();
    }
    if (observer) observer({epoch, loss_sum / static_cast<double>(order.size()), miou, weights});
  }
  result.trajectory.write_csv(result.trajectory_csv);
  return result;
}

// ---------------------------------------------------------------------------

void SelectionRule::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in [0, 1]");
  if (k_min < 1 || k_min > k_max || k_max > kRefinedEntries) {
    throw std::invalid_argument("selection rule needs 1 <= k_min <= k_max <= " + std::to_string(kRefinedEntries));
  }
}

std::vector<int> rank_weights(const Eigen::VectorXd& weights) {
  std::vector<int> order(static_cast<std::size_t>(weights.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return weights(a) > weights(b); });
  return order;
}

SignificantFeatureSelection select_significant(const WeightTrajectory& trajectory, const SelectionRule& rule) {
  rule.validate();
  if (trajectory.empty()) throw std::invalid_argument("cannot select from an empty trajectory");
  const Eigen::VectorXd& w = trajectory.final_weights();
  const auto order = rank_weights(w);
  int k = 0;
  double mass = 0.0;
  while (k < static_cast<int>(order.size()) && mass < rule.tau) mass += w(order[static_cast<std::size_t>(k++)]);
  k = std::clamp(k, rule.k_min, rule.k_max);

  SignificantFeatureSelection sel;
  sel.modality = trajectory.modality();
  sel.rule = rule;
  sel.final_weights = w;
  for (int i = 0; i < k; ++i) {
    const int idx = order[static_cast<std::size_t>(i)];
    sel.entries.push_back({trajectory.modality(), stacking_stream(idx), stacking_scale(idx)});
  }
  return sel;
}

std::vector<FeatureIndex> ssf_layout(const SignificantFeatureSelection& ir, const SignificantFeatureSelection& vi) {
  if (ir.modality != Modality::ir || vi.modality != Modality::vi) {
    throw std::invalid_argument("ssf layout needs an infrared and a visible selection");
  }
  std::vector<FeatureIndex> out = ir.entries;
  out.insert(out.end(), vi.entries.begin(), vi.entries.end());
  return out;
}

nlohmann::json SignificantFeatureSelection::to_json() const {
  nlohmann::json entries_json = nlohmann::json::array();
  for (const auto& e : entries) entries_json.push_back({{"stream", to_string(e.stream)}, {"scale", e.scale}});
  std::vector<double> w(final_weights.data(), final_weights.data() + final_weights.size());
  nlohmann::json j = {{"modality", to_string(modality)},
                      {"rule", {{"tau", rule.tau}, {"k_min", rule.k_min}, {"k_max", rule.k_max}}},
                      {"entries", entries_json},
                      {"final_weights", w}};
  if (!trajectory.empty()) j["trajectory"] = trajectory;
  return j;
}

namespace {

void require_keys(const nlohmann::json& j, const std::set<std::string>& required, const std::set<std::string>& optional,
                  const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& key : required) {
    if (!j.contains(key)) throw std::invalid_argument(where + " lacks \"" + key + "\"");
  }
  for (const auto& [key, _] : j.items()) {
    if (!required.contains(key) && !optional.contains(key)) {
      throw std::invalid_argument(where + " has unknown key \"" + key + "\"");
    }
  }
}

}  // namespace

SignificantFeatureSelection SignificantFeatureSelection::from_json(const nlohmann::json& j) {
  try {
    require_keys(j, {"modality", "rule", "entries", "final_weights"}, {"trajectory"}, "selection");
    require_keys(j.at("rule"), {"tau", "k_min", "k_max"}, {}, "selection rule");
    SignificantFeatureSelection sel;
    sel.modality = parse_modality(j.at("modality").get<std::string>());
    sel.rule.tau = j.at("rule").at("tau").get<double>();
    sel.rule.k_min = j.at("rule").at("k_min").get<int>();
    sel.rule.k_max = j.at("rule").at("k_max").get<int>();
    sel.rule.validate();
    if (j.contains("trajectory")) sel.trajectory = j.at("trajectory").get<std::string>();

    const auto w = j.at("final_weights").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(kRefinedEntries)) {
      throw std::invalid_argument("final_weights must have " + std::to_string(kRefinedEntries) + " entries");
    }
    sel.final_weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    if (!weights_valid(sel.final_weights)) throw std::invalid_argument("final_weights are not a positive unit-sum vector");

    if (!j.at("entries").is_array()) throw std::invalid_argument("entries must be an array");
    std::set<int> seen;
    for (const auto& e : j.at("entries")) {
      require_keys(e, {"stream", "scale"}, {}, "selection entry");
      const Stream stream = parse_stream(e.at("stream").get<std::string>());
      const int scale = e.at("scale").get<int>();
      if (scale < 1 || scale > kScales) throw std::invalid_argument("entry scale must lie in 1..4");
      if (!seen.insert(stacking_index(stream, scale)).second) throw std::invalid_argument("duplicate selection entry");
      sel.entries.push_back({sel.modality, stream, scale});
    }
    const auto n = static_cast<int>(sel.entries.size());
    if (n < sel.rule.k_min || n > sel.rule.k_max) {
      throw std::invalid_argument("selection has " + std::to_string(n) + " entries, rule allows " +
                                  std::to_string(sel.rule.k_min) + ".." + std::to_string(sel.rule.k_max));
    }
    WeightTrajectory t(sel.modality);
    t.record(1, sel.final_weights);
    if (select_significant(t, sel.rule).entries != sel.entries) {
      throw std::invalid_argument("selection entries do not follow the rule applied to final_weights");
    }
    return sel;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed selection: ") + e.what());
  }
}

void SignificantFeatureSelection::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

SignificantFeatureSelection SignificantFeatureSelection::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read selection " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace dsf
