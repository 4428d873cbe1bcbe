#include "acda/trainer.hpp"

#include "acda/archive.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace acda::trainer {

namespace {

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kInitStream = 101;
constexpr std::uint32_t kSourceStream = 102;
constexpr std::uint32_t kTargetStream = 103;
constexpr int kEvalChunk = 256;

std::vector<int> labels_at(const std::vector<int>& all, std::span<const int> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(all[static_cast<std::size_t>(r)]);
  return out;
}

}  // namespace

std::vector<NamedParameter> Model::parameters() const {
  auto out = backbone.parameters();
  auto proj = projection.parameters();
  out.insert(out.end(), proj.begin(), proj.end());
  return out;
}

Model make_model(const ExperimentConfig& config, int num_classes, std::uint64_t seed) {
  auto spec = config.backbone;
  spec.num_classes = num_classes;
  auto rng = stream_rng(seed, kInitStream);
  backbone::Backbone net(spec, rng);
  projection::ProjectionSet proj(config.projection, spec.tap_shapes(), config.projection_target, rng);
  return Model{std::move(net), std::move(proj)};
}

SgdMomentum::SgdMomentum(std::vector<NamedParameter> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  for (const auto& p : params_) velocity_.push_back(Vector::Zero(static_cast<Eigen::Index>(p.tensor.numel())));
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void SgdMomentum::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    velocity_[i] = momentum_ * velocity_[i] + p.grad();
    p.mutable_value() -= lr_ * velocity_[i];
  }
}

// ---- objective -------------------------------------------------------------

Objective alignment_objective(const Model& model, const ExperimentConfig& config, const Tensor& src_x,
                              std::span<const int> src_y, const Tensor& tgt_x, std::span<const int> tgt_pseudo,
                              const AlignmentContext* frozen) {
  const auto fs = model.backbone.forward(src_x);
  const auto ft = model.backbone.forward(tgt_x);
  const Tensor l_ce = backbone::cross_entropy(fs.logits, src_y);

  // With lambda = 0 the alignment terms are evaluated for logging only.
  const bool track = config.lambda > 0.0;
  auto maybe_detach = [track](const Tensor& t) { return track ? t : t.detach(); };

  const std::size_t m = fs.taps.size();
  std::vector<Tensor> ls, lt;
  for (std::size_t i = 0; i < m; ++i) {
    ls.push_back(model.projection.project(maybe_detach(fs.taps[i]), i, projection::Domain::Source));
    lt.push_back(model.projection.project(maybe_detach(ft.taps[i]), i, projection::Domain::Target));
  }
  if (!track)
    for (std::size_t i = 0; i < m; ++i) {
      ls[i] = ls[i].detach();
      lt[i] = lt[i].detach();
    }
  const Tensor es = maybe_detach(fs.embedding);
  const Tensor et = maybe_detach(ft.embedding);

  Objective obj{Tensor{}, LossBreakdown{}, frozen ? *frozen : AlignmentContext{
      config.use_attention ? attention::attention_weights(lt, ls) : attention::AttentionMatrix::uniform(static_cast<int>(m)),
      alignment::median_pair_kernels(ls, lt, config.kernel_multipliers),
      kernels::median_kernel(es.as_rows(), et.as_rows(), config.kernel_multipliers)}};

  Tensor l_cross = Tensor::zeros({1});
  double delta = config.delta;
  if (config.use_cross_layer) {
    if (config.use_label_conditioning) {
      if (tgt_pseudo.size() != static_cast<std::size_t>(tgt_x.dim(0)))
        throw ShapeError("alignment_objective: label conditioning needs one pseudo-label per target sample");
      auto cond = alignment::conditioned_cross_layer_loss(ls, src_y, lt, tgt_pseudo, obj.context.w,
                                                          obj.context.cross_kernels);
      l_cross = cond.loss;
      obj.classes_used = cond.classes_used;
    } else {
      l_cross = alignment::cross_layer_loss(ls, lt, obj.context.w, obj.context.cross_kernels);
    }
  } else {
    // Same-layer ablation: the alignment loss is the embedding term alone.
    delta = 0.0;
  }
  const Tensor l_same = alignment::same_layer_loss(es, et, obj.context.same_kernel);

  obj.breakdown = alignment::combine(l_cross.item(), l_same.item(), l_ce.item(), delta, config.lambda);
  obj.breakdown.w = obj.context.w;
  const std::vector<Tensor> terms{l_ce, l_cross, l_same};
  const std::vector<double> coeffs{1.0, config.lambda * delta, config.lambda * (1.0 - delta)};
  obj.l_all = weighted_sum(terms, coeffs);
  return obj;
}

// ---- evaluation ------------------------------------------------------------

double Evaluator::accuracy(const backbone::Backbone& net, const Tensor& inputs, std::span<const int> labels) {
  if (inputs.rank() == 0 || inputs.dim(0) == 0) throw std::invalid_argument("evaluate: empty input set");
  const int n = inputs.dim(0);
  if (labels.size() != static_cast<std::size_t>(n)) throw ShapeError("evaluate: label count mismatch");
  const auto& s = net.spec().input;
  const Matrix rows = inputs.as_rows();
  int correct = 0;
  for (int start = 0; start < n; start += kEvalChunk) {
    const int len = std::min(kEvalChunk, n - start);
    Vector v = Eigen::Map<const Vector>(rows.row(start).data(), static_cast<Eigen::Index>(len) * rows.cols());
    const auto out = net.forward(Tensor::constant({len, s.c, s.h, s.w}, std::move(v)));
    const ConstMatrixMap logits = out.logits.as_rows();
    for (int i = 0; i < len; ++i) {
      Eigen::Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      correct += static_cast<int>(arg) == labels[static_cast<std::size_t>(start + i)];
    }
  }
  return static_cast<double>(correct) / n;
}

double Evaluator::source_accuracy(const backbone::Backbone& net, const data::DomainPairDataset& ds) {
  return accuracy(net, ds.source.all(), ds.source.labels());
}

double Evaluator::target_accuracy(const backbone::Backbone& net, const data::DomainPairDataset& ds) {
  return accuracy(net, ds.target.all(), ds.target.hidden_labels());
}

const std::vector<int>& Evaluator::target_labels(const data::DomainPairDataset& ds) {
  return ds.target.hidden_labels();
}

double evaluate(const backbone::Backbone& net, const Tensor& inputs, std::span<const int> labels) {
  return Evaluator::accuracy(net, inputs, labels);
}

Matrix embed(const backbone::Backbone& net, const Matrix& inputs, const projection::FeatureShape& shape) {
  const auto n = static_cast<int>(inputs.rows());
  Matrix out(n, net.spec().embed_dim);
  for (int start = 0; start < n; start += kEvalChunk) {
    const int len = std::min(kEvalChunk, n - start);
    Vector v = Eigen::Map<const Vector>(inputs.row(start).data(), static_cast<Eigen::Index>(len) * inputs.cols());
    const auto f = net.forward(Tensor::constant({len, shape.c, shape.h, shape.w}, std::move(v)));
    out.middleRows(start, len) = f.embedding.as_rows();
  }
  return out;
}

// ---- trainer ---------------------------------------------------------------

Trainer::Trainer(ExperimentConfig config, const data::DomainPairDataset& data, std::uint64_t seed)
    : config_(std::move(config)),
      data_(data),
      seed_(seed),
      model_(make_model(config_, data.num_classes, seed)),
      optimizer_(model_.parameters(), config_.lr, config_.momentum),
      source_rng_(stream_rng(seed, kSourceStream)),
      target_rng_(stream_rng(seed, kTargetStream)) {
  config_.validate();
  if (data_.source.size() < 1 || data_.target.size() < 1) throw ConfigError("dataset: both domains need samples");
  if (!(data_.input_shape == config_.backbone.input))
    throw ConfigError("dataset input shape " + data_.input_shape.str() + " differs from backbone.input " +
                      config_.backbone.input.str());
  record_.seed = seed;
  record_.config_hash = config_.hash();
}

std::vector<int> Trainer::shuffled(int n, std::mt19937_64& rng) const {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with an explicit draw keeps the order identical across
  // standard library implementations.
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

void Trainer::finish_epoch(const std::string& phase, const std::vector<LossBreakdown>& steps, int skips) {
  ++epoch_;
  double ce = 0, cross = 0, same = 0;
  for (const auto& s : steps) {
    ce += s.l_ce;
    cross += s.l_cross_ali;
    same += s.l_same_ali;
  }
  const double n = steps.empty() ? 1.0 : static_cast<double>(steps.size());
  const double delta = steps.empty() ? config_.delta : steps.back().delta;
  EpochRecord e;
  e.epoch = epoch_;
  e.phase = phase;
  e.losses = alignment::combine(cross / n, same / n, ce / n, delta, steps.empty() ? 0.0 : steps.back().lambda);
  e.source_acc = Evaluator::source_accuracy(model_.backbone, data_);
  e.target_acc = Evaluator::target_accuracy(model_.backbone, data_);
  e.conditioning_skips = skips;
  record_.epochs.push_back(std::move(e));
}

void Trainer::abort_non_finite(const LossBreakdown& b, std::span<const int> src_rows, std::span<const int> tgt_rows) {
  nlohmann::json dump{{"epoch", epoch_ + 1},
                      {"l_ce", b.l_ce},
                      {"l_cross_ali", b.l_cross_ali},
                      {"l_same_ali", b.l_same_ali},
                      {"source_rows", std::vector<int>(src_rows.begin(), src_rows.end())},
                      {"target_rows", std::vector<int>(tgt_rows.begin(), tgt_rows.end())}};
  nlohmann::json norms = nlohmann::json::object();
  for (const auto& p : model_.parameters()) norms[p.name] = p.tensor.value().norm();
  dump["parameter_norms"] = norms;
  std::string where;
  if (diagnostics_dir_) {
    std::filesystem::create_directories(*diagnostics_dir_);
    const auto path = *diagnostics_dir_ / ("nonfinite_seed" + std::to_string(seed_) + ".json");
    std::ofstream(path) << dump.dump(2) << '\n';
    where = " (diagnostics in " + path.string() + ")";
  }
  throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch_ + 1) + where + ": " + dump.dump());
}

void Trainer::pretrain() {
  const int n = data_.source.size();
  const int b = config_.batch_size;
  for (int e = 0; e < config_.pretrain_epochs; ++e) {
    const auto order = shuffled(n, source_rng_);
    std::vector<LossBreakdown> steps;
    for (int start = 0; start < n; start += b) {
      const std::span<const int> rows(order.data() + start, static_cast<std::size_t>(std::min(b, n - start)));
      const auto y = labels_at(data_.source.labels(), rows);
      const auto out = model_.backbone.forward(data_.source.batch(rows));
      const Tensor ce = backbone::cross_entropy(out.logits, y);
      auto bd = alignment::combine(0.0, 0.0, ce.item(), config_.delta, config_.lambda);
      if (!std::isfinite(bd.l_all)) abort_non_finite(bd, rows, {});
      optimizer_.zero_grad();
      ce.backward();
      optimizer_.step();
      steps.push_back(bd);
      record_.steps.push_back(bd);
    }
    finish_epoch("pretrain", steps, 0);
  }
}

void Trainer::refresh_pseudo_labels(int epoch) {
  const Matrix tgt = embed(model_.backbone, data_.target.inputs(), data_.input_shape);
  const Matrix src = embed(model_.backbone, data_.source.inputs(), data_.input_shape);
  pseudo_labels_ = alignment::pseudo_label(tgt, src, data_.source.labels(), data_.num_classes,
                                           seed_ * 1000003ull + static_cast<std::uint64_t>(epoch),
                                           {config_.kmeans_iterations})
                       .labels;
}

void Trainer::align() {
  const int ns = data_.source.size(), nt = data_.target.size();
  const int b = config_.batch_size;
  const int steps_per_epoch = std::max((ns + b - 1) / b, (nt + b - 1) / b);
  const bool conditioning = config_.use_cross_layer && config_.use_label_conditioning;

  for (int e = 0; e < config_.align_epochs; ++e) {
    if (conditioning) refresh_pseudo_labels(e);
    std::vector<int> src_order = shuffled(ns, source_rng_), tgt_order = shuffled(nt, target_rng_);
    int src_pos = 0, tgt_pos = 0, skips = 0;
    std::vector<LossBreakdown> steps;
    for (int s = 0; s < steps_per_epoch; ++s) {
      if (src_pos >= ns) {
        src_order = shuffled(ns, source_rng_);
        src_pos = 0;
      }
      if (tgt_pos >= nt) {
        tgt_order = shuffled(nt, target_rng_);
        tgt_pos = 0;
      }
      const std::span<const int> src_rows(src_order.data() + src_pos, static_cast<std::size_t>(std::min(b, ns - src_pos)));
      const std::span<const int> tgt_rows(tgt_order.data() + tgt_pos, static_cast<std::size_t>(std::min(b, nt - tgt_pos)));
      src_pos += b;
      tgt_pos += b;

      const auto y = labels_at(data_.source.labels(), src_rows);
      const auto pseudo = conditioning ? labels_at(pseudo_labels_, tgt_rows) : std::vector<int>{};
      auto obj = alignment_objective(model_, config_, data_.source.batch(src_rows), y, data_.target.batch(tgt_rows),
                                     pseudo);
      if (obj.classes_used == 0) ++skips;
      if (!std::isfinite(obj.breakdown.l_all) || !std::isfinite(obj.l_all.item()))
        abort_non_finite(obj.breakdown, src_rows, tgt_rows);
      optimizer_.zero_grad();
      obj.l_all.backward();
      optimizer_.step();
      steps.push_back(obj.breakdown);
      record_.steps.push_back(std::move(obj.breakdown));
    }
    finish_epoch("align", steps, skips);
  }
}

RunRecord Trainer::run() {
  const auto t0 = std::chrono::steady_clock::now();
  pretrain();
  align();
  record_.final_source_acc = Evaluator::source_accuracy(model_.backbone, data_);
  record_.final_target_acc = Evaluator::target_accuracy(model_.backbone, data_);
  record_.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record_;
}

// ---- logs and checkpoints ----------------------------------------------------

void write_run_log(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write run log " + path.string());
  for (const auto& e : record.epochs) {
    nlohmann::json j{{"type", "epoch"},
                     {"epoch", e.epoch},
                     {"phase", e.phase},
                     {"l_ce", e.losses.l_ce},
                     {"l_cross_ali", e.losses.l_cross_ali},
                     {"l_same_ali", e.losses.l_same_ali},
                     {"l_ali", e.losses.l_ali},
                     {"l_all", e.losses.l_all},
                     {"delta", e.losses.delta},
                     {"lambda", e.losses.lambda},
                     {"source_acc", e.source_acc},
                     {"target_acc", e.target_acc},
                     {"conditioning_skips", e.conditioning_skips}};
    out << j.dump() << '\n';
  }
  nlohmann::json summary{{"type", "summary"},
                         {"seed", record.seed},
                         {"config_hash", record.config_hash},
                         {"epochs", record.epochs.size()},
                         {"final_source_acc", record.final_source_acc},
                         {"final_target_acc", record.final_target_acc},
                         {"wall_clock_s", record.wall_clock_s}};
  out << summary.dump() << '\n';
  if (!out) throw RuntimeFailure("write failed for run log " + path.string());
}

RunRecord read_run_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot read run log " + path.string());
  RunRecord r;
  bool has_summary = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw RuntimeFailure("malformed run log line in " + path.string() + ": " + ex.what());
    }
    if (j.at("type") == "epoch") {
      EpochRecord e;
      e.epoch = j.at("epoch");
      e.phase = j.at("phase");
      e.losses.l_ce = j.at("l_ce");
      e.losses.l_cross_ali = j.at("l_cross_ali");
      e.losses.l_same_ali = j.at("l_same_ali");
      e.losses.l_ali = j.at("l_ali");
      e.losses.l_all = j.at("l_all");
      e.losses.delta = j.at("delta");
      e.losses.lambda = j.at("lambda");
      e.source_acc = j.at("source_acc");
      e.target_acc = j.at("target_acc");
      e.conditioning_skips = j.at("conditioning_skips");
      r.epochs.push_back(std::move(e));
    } else if (j.at("type") == "summary") {
      r.seed = j.at("seed");
      r.config_hash = j.at("config_hash");
      r.final_source_acc = j.at("final_source_acc");
      r.final_target_acc = j.at("final_target_acc");
      r.wall_clock_s = j.at("wall_clock_s");
      has_summary = true;
    }
  }
  if (!has_summary) throw RuntimeFailure("run log " + path.string() + " has no summary row (incomplete run?)");
  return r;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const ExperimentConfig& config,
                     std::uint64_t seed) {
  archive::Archive ar;
  ar.meta = {{"kind", "checkpoint"},
             {"seed", seed},
             {"num_classes", model.backbone.spec().num_classes},
             {"config_hash", config.hash()},
             {"config", config.to_json()}};
  for (const auto& p : model.parameters()) {
    const auto& v = p.tensor.value();
    ar.arrays.push_back({p.name, p.tensor.shape(), "f64", std::vector<double>(v.data(), v.data() + v.size())});
  }
  archive::write(path, ar);
}

std::uint64_t load_checkpoint(const std::filesystem::path& path, Model& model) {
  const auto ar = archive::read(path);
  if (ar.meta.value("kind", "") != "checkpoint") throw RuntimeFailure(path.string() + " is not a checkpoint");
  for (auto& p : model.parameters()) {
    if (!ar.contains(p.name)) throw RuntimeFailure("checkpoint lacks parameter '" + p.name + "'");
    const auto& a = ar.get(p.name);
    if (a.shape != p.tensor.shape())
      throw RuntimeFailure("checkpoint parameter '" + p.name + "' has shape " + shape_string(a.shape) +
                           " but the model expects " + shape_string(p.tensor.shape()));
    std::copy(a.data.begin(), a.data.end(), p.tensor.mutable_value().data());
  }
  return ar.meta.value("seed", std::uint64_t{0});
}

}  // namespace acda::trainer
