#include "demoe/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace demoe {

namespace {

void require_non_negative(double v, const char* name, std::vector<std::string>& problems)
{
  if (!std::isfinite(v) || v < 0) problems.push_back(std::string(name) + " must be finite and >= 0");
}

void throw_problems(const char* what, const std::vector<std::string>& problems)
{
  if (problems.empty()) return;
  std::string msg = what;
  for (const auto& p : problems) msg += "\n  " + p;
  throw std::invalid_argument(msg);
}

}  // namespace

void LossWeights::validate() const
{
  std::vector<std::string> problems;
  require_non_negative(annotator_kl, "annotator_emb_w", problems);
  require_non_negative(demographic_kl, "demographic_emb_w", problems);
  require_non_negative(demo_specialization, "demographic_specialization_w", problems);
  if (specialization_sign != 1.0 && specialization_sign != -1.0)
    problems.push_back("specialization_sign must be +1 or -1");
  throw_problems("invalid loss weights:", problems);
}

std::string_view to_string(Phase phase)
{
  switch (phase) {
    case Phase::A: return "A";
    case Phase::B: return "B";
    case Phase::C: return "C";
  }
  return "?";
}

void PhaseSchedule::validate() const
{
  std::vector<std::string> problems;
  const char* names[] = {"A", "B", "C"};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& w = phases[i];
    for (double v : {w.load, w.orthogonality, w.variance})
      if (!std::isfinite(v) || v < 0) {
        problems.push_back(std::string("phase ") + names[i] + " weights must be finite and >= 0");
        break;
      }
  }
  if (!(threshold_ab > 0) || !std::isfinite(threshold_ab)) problems.push_back("phase_threshold_ab must be > 0");
  if (!(threshold_bc > 0) || !std::isfinite(threshold_bc)) problems.push_back("phase_threshold_bc must be > 0");
  if (!(ema_decay >= 0 && ema_decay < 1)) problems.push_back("load_std_ema_decay must be in [0, 1)");
  throw_problems("invalid phase schedule:", problems);
}

PhaseStep phase_step(const PhaseSchedule& schedule, Phase current, double running_load_std)
{
  Phase next = current;
  if (current == Phase::A && running_load_std < schedule.threshold_ab)
    next = Phase::B;
  else if (current == Phase::B && running_load_std < schedule.threshold_bc)
    next = Phase::C;
  return {next, schedule.weights(next)};
}

PhaseStep PhaseTracker::observe(double batch_load_std)
{
  running_ = running_ ? schedule_.ema_decay * *running_ + (1.0 - schedule_.ema_decay) * batch_load_std : batch_load_std;
  const auto step = phase_step(schedule_, phase_, *running_);
  phase_ = step.phase;
  return step;
}

nlohmann::json LossBreakdown::to_json() const
{
  return {{"mse", mse},
          {"kl_annotator", kl_annotator},
          {"kl_demographic", kl_demographic},
          {"load_std", load_std},
          {"orthogonality", orthogonality},
          {"variance", variance},
          {"demo_specialization", demo_specialization},
          {"total", total},
          {"active_phase", std::string(to_string(active_phase))},
          {"weights",
           {{"annotator_kl", weights.annotator_kl},
            {"demographic_kl", weights.demographic_kl},
            {"load", weights.load},
            {"orthogonality", weights.orthogonality},
            {"variance", weights.variance},
            {"demo_specialization", weights.demo_specialization}}}};
}

void OptimizerConfig::validate() const
{
  std::vector<std::string> problems;
  if (!(lr_gate > 0) || !std::isfinite(lr_gate)) {
    // Zero is accepted so the gate can be frozen deliberately.
    if (lr_gate != 0.0) problems.push_back("learning_rate_gate must be > 0");
  }
  if (!(lr_main > 0) || !std::isfinite(lr_main)) problems.push_back("learning_rate_main must be > 0");
  if (!(momentum >= 0 && momentum < 1)) problems.push_back("momentum must be in [0, 1)");
  if (max_epochs < 1) problems.push_back("max_epochs must be >= 1");
  if (patience < 1) problems.push_back("patience must be >= 1");
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  throw_problems("invalid optimizer configuration:", problems);
}

std::vector<TrainingExample> make_examples(const std::vector<AnnotationRecord>& records, const ProfileIndex& profiles)
{
  std::vector<TrainingExample> out;
  out.reserve(records.size());
  for (const auto& r : records)
    out.push_back({r.instance_id, r.annotator_id, &profiles.at(r.annotator_id), r.rating, 1.0, r.is_synthetic});
  return out;
}

Gradient zero_gradient(const ModelParameters& params)
{
  Gradient g;
  g.gate.weight = Eigen::MatrixXd::Zero(params.gate.weight.rows(), params.gate.weight.cols());
  g.gate.bias = Eigen::VectorXd::Zero(params.gate.bias.size());
  for (const auto& e : params.pool.experts)
    g.pool.experts.push_back({Eigen::MatrixXd::Zero(e.w1.rows(), e.w1.cols()), Eigen::VectorXd::Zero(e.b1.size()),
                              Eigen::MatrixXd::Zero(e.w2.rows(), e.w2.cols()), Eigen::VectorXd::Zero(e.b2.size())});
  g.pool.head.weight = Eigen::VectorXd::Zero(params.pool.head.weight.size());
  g.pool.head.bias = 0.0;
  g.embeddings.demographics.resize(params.embeddings.demographics.size());
  return g;
}

namespace {

struct SampleCache {
  ModelInput input;
  RoutingDecision decision;
  std::vector<Eigen::VectorXd> activations;  // tanh(w1 x + b1) per selected expert
  SelectedOutputs outputs;                   // expert outputs per selected expert
  Eigen::VectorXd hidden;
  double error = 0.0;                        // z_hat - z
};

GaussianEmbedding& grad_entry(std::map<std::string, GaussianEmbedding>& table, const std::string& key, std::size_t dim)
{
  auto it = table.find(key);
  if (it == table.end()) it = table.emplace(key, GaussianEmbedding::zeros(dim)).first;
  return it->second;
}

/// Accumulates d/d(mean, log_variance) of a reparameterized draw given d/d(sample).
void embedding_backward(const GaussianEmbedding& emb, const Eigen::Ref<const Eigen::VectorXd>& d_sample,
                        const Eigen::VectorXd* noise, Eigen::Index noise_offset, GaussianEmbedding& grad)
{
  grad.mean += d_sample;
  if (noise) {
    const auto eps = noise->segment(noise_offset, d_sample.size()).array();
    grad.log_variance += (d_sample.array() * 0.5 * (0.5 * emb.log_variance.array()).exp() * eps).matrix();
  }
}

}  // namespace

LossEvaluation total_loss(const DemMoE& model, const TextEmbeddingStore& store, std::span<const TrainingExample> batch,
                          const std::vector<Eigen::VectorXd>* noise, const LossWeights& weights,
                          const PhaseWeights& phase_weights, Phase phase, bool with_gradient)
{
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (noise && noise->size() != batch.size()) throw std::invalid_argument("total_loss: one noise vector per sample");
  const auto& params = model.parameters();
  const auto& schema = model.schema();
  const auto B = static_cast<double>(batch.size());
  const auto E = static_cast<Eigen::Index>(model.num_experts());

  std::vector<SampleCache> cache(batch.size());
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(batch.size()), E);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(E);
  std::vector<SelectedOutputs> outputs(batch.size());
  std::vector<const AnnotatorProfile*> profiles;
  profiles.reserve(batch.size());

  LossEvaluation res;
  auto& L = res.breakdown;
  L.active_phase = phase;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    if (!ex.profile) throw std::invalid_argument("training example without profile");
    profiles.push_back(ex.profile);
    auto& c = cache[i];
    const Eigen::VectorXd* nz = noise ? &(*noise)[i] : nullptr;
    c.input = model.embed(store, ex.instance_id, ex.annotator_id, *ex.profile, nz);
    c.decision = model.route(c.input);
    c.hidden = Eigen::VectorXd::Zero(params.pool.head.weight.size());
    for (std::size_t n = 0; n < c.decision.selected.size(); ++n) {
      const auto& expert = params.pool.experts[c.decision.selected[n]];
      c.activations.push_back((expert.w1 * c.input.x + expert.b1).array().tanh().matrix());
      c.outputs.push_back(expert.w2 * c.activations.back() + expert.b2);
      c.hidden += c.decision.weights[n] * c.outputs.back();
      counts[static_cast<Eigen::Index>(c.decision.selected[n])] +=
          c.decision.probabilities[static_cast<Eigen::Index>(c.decision.selected[n])];
    }
    outputs[i] = c.outputs;
    probs.row(static_cast<Eigen::Index>(i)) = c.decision.probabilities.transpose();
    const double z_hat = params.pool.head.weight.dot(c.hidden) + params.pool.head.bias;
    c.error = z_hat - model.normalizer().normalize(ex.rating);
    L.mse += ex.weight * c.error * c.error;

    if (auto it = params.embeddings.annotators.find(ex.annotator_id); it != params.embeddings.annotators.end())
      L.kl_annotator += kl_to_standard_normal(it->second);
    for (std::size_t d = 0; d < schema.categories.size(); ++d)
      L.kl_demographic +=
          kl_to_standard_normal(params.embeddings.demographics[d].at(ex.profile->value(schema.categories[d].name)));
  }
  L.mse /= B;
  L.kl_annotator /= B;
  L.kl_demographic /= B;

  const auto groups = subgroup_labels(schema, profiles);
  L.load_std = load_std_loss(counts);
  L.orthogonality = orthogonality_loss(outputs);
  // The variance term acts on the gate's softmax probabilities; on raw logits it is unbounded below.
  L.variance = variance_loss(probs);
  L.demo_specialization = demo_specialization_loss(probs, groups);

  auto& W = L.weights;
  W.annotator_kl = weights.annotator_kl;
  W.demographic_kl = weights.demographic_kl;
  W.load = phase_weights.load;
  W.orthogonality = phase_weights.orthogonality;
  W.variance = phase_weights.variance;
  W.demo_specialization = weights.specialization_sign * weights.demo_specialization;
  L.total = L.mse + W.annotator_kl * L.kl_annotator + W.demographic_kl * L.kl_demographic + W.load * L.load_std +
            W.orthogonality * L.orthogonality + W.variance * L.variance + W.demo_specialization * L.demo_specialization;

  if (!with_gradient) return res;

  Gradient& G = res.gradient;
  G = zero_gradient(params);
  const Eigen::VectorXd d_counts = W.load != 0 ? Eigen::VectorXd(W.load * load_std_loss_grad(counts))
                                               : Eigen::VectorXd::Zero(E);
  Eigen::MatrixXd d_probs = W.demo_specialization != 0
                                ? Eigen::MatrixXd(W.demo_specialization * demo_specialization_loss_grad(probs, groups))
                                : Eigen::MatrixXd::Zero(probs.rows(), E);
  if (W.variance != 0) d_probs += W.variance * variance_loss_grad(probs);
  std::vector<SelectedOutputs> d_outputs;
  if (W.orthogonality != 0) d_outputs = orthogonality_loss_grad(outputs);

  const std::size_t text_dim = model.config().text_dim;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    const auto& c = cache[i];
    const auto& dec = c.decision;
    const Eigen::VectorXd* nz = noise ? &(*noise)[i] : nullptr;

    const double dz = 2.0 * ex.weight * c.error / B;
    G.pool.head.weight += dz * c.hidden;
    G.pool.head.bias += dz;
    const Eigen::VectorXd dh = dz * params.pool.head.weight;

    Eigen::VectorXd dx = Eigen::VectorXd::Zero(c.input.x.size());
    std::vector<double> d_mix(dec.selected.size());
    for (std::size_t n = 0; n < dec.selected.size(); ++n) {
      const std::size_t j = dec.selected[n];
      const auto& expert = params.pool.experts[j];
      auto& ge = G.pool.experts[j];
      Eigen::VectorXd dy = dec.weights[n] * dh;
      if (!d_outputs.empty()) dy += W.orthogonality * d_outputs[i][n];
      d_mix[n] = dh.dot(c.outputs[n]);
      ge.w2 += dy * c.activations[n].transpose();
      ge.b2 += dy;
      const Eigen::VectorXd da =
          ((expert.w2.transpose() * dy).array() * (1.0 - c.activations[n].array().square())).matrix();
      ge.w1 += da * c.input.x.transpose();
      ge.b1 += da;
      dx += expert.w1.transpose() * da;
    }

    Eigen::VectorXd dp = d_probs.row(static_cast<Eigen::Index>(i)).transpose();
    double mass = 0.0;
    for (auto j : dec.selected) mass += dec.probabilities[static_cast<Eigen::Index>(j)];
    double weighted = 0.0;
    for (std::size_t n = 0; n < dec.selected.size(); ++n)
      weighted += d_mix[n] * dec.probabilities[static_cast<Eigen::Index>(dec.selected[n])];
    for (std::size_t n = 0; n < dec.selected.size(); ++n) {
      const auto j = static_cast<Eigen::Index>(dec.selected[n]);
      dp[j] += d_counts[j];
      if (model.config().renormalize_topk)
        dp[j] += d_mix[n] / mass - weighted / (mass * mass);
      else
        dp[j] += d_mix[n];
    }
    Eigen::VectorXd ds = (dec.probabilities.array() * (dp.array() - dp.dot(dec.probabilities))).matrix();
    G.gate.weight += ds * c.input.x.transpose();
    G.gate.bias += ds;
    dx += params.gate.weight.transpose() * ds;

    auto off = static_cast<Eigen::Index>(text_dim);
    const auto a_dim = static_cast<Eigen::Index>(model.config().annotator_dim);
    if (auto it = params.embeddings.annotators.find(ex.annotator_id); it != params.embeddings.annotators.end()) {
      auto& g = grad_entry(G.embeddings.annotators, ex.annotator_id, it->second.dim());
      embedding_backward(it->second, dx.segment(off, a_dim), nz, 0, g);
      kl_to_standard_normal_grad(it->second, W.annotator_kl / B, g);
    }
    off += a_dim;
    const auto d_dim = static_cast<Eigen::Index>(model.config().demographic_dim);
    for (std::size_t d = 0; d < schema.categories.size(); ++d) {
      const std::string value = ex.profile->value(schema.categories[d].name);
      const auto& emb = params.embeddings.demographics[d].at(value);
      auto& g = grad_entry(G.embeddings.demographics[d], value, emb.dim());
      embedding_backward(emb, dx.segment(off, d_dim), nz, off - static_cast<Eigen::Index>(text_dim), g);
      kl_to_standard_normal_grad(emb, W.demographic_kl / B, g);
      off += d_dim;
    }
  }
  return res;
}

SgdMomentum::SgdMomentum(double lr_gate, double lr_main, double momentum)
    : lr_gate_(lr_gate), lr_main_(lr_main), momentum_(momentum)
{
}

namespace {

template <class T>
void sgd_update(T& param, const T& grad, T& velocity, double lr, double momentum)
{
  if (lr == 0.0) return;
  velocity = momentum * velocity + grad;
  param -= lr * velocity;
}

void sgd_update_table(std::map<std::string, GaussianEmbedding>& params,
                      const std::map<std::string, GaussianEmbedding>& grads,
                      std::map<std::string, GaussianEmbedding>& velocity, double lr, double momentum)
{
  for (const auto& [key, g] : grads) {
    auto& p = params.at(key);
    auto& v = grad_entry(velocity, key, p.dim());
    sgd_update(p.mean, g.mean, v.mean, lr, momentum);
    sgd_update(p.log_variance, g.log_variance, v.log_variance, lr, momentum);
  }
}

}  // namespace

void SgdMomentum::step(ModelParameters& params, const Gradient& grad)
{
  if (!velocity_) velocity_ = zero_gradient(params);
  auto& v = *velocity_;
  sgd_update(params.gate.weight, grad.gate.weight, v.gate.weight, lr_gate_, momentum_);
  sgd_update(params.gate.bias, grad.gate.bias, v.gate.bias, lr_gate_, momentum_);
  for (std::size_t e = 0; e < params.pool.experts.size(); ++e) {
    auto& p = params.pool.experts[e];
    const auto& g = grad.pool.experts[e];
    auto& ve = v.pool.experts[e];
    sgd_update(p.w1, g.w1, ve.w1, lr_main_, momentum_);
    sgd_update(p.b1, g.b1, ve.b1, lr_main_, momentum_);
    sgd_update(p.w2, g.w2, ve.w2, lr_main_, momentum_);
    sgd_update(p.b2, g.b2, ve.b2, lr_main_, momentum_);
  }
  sgd_update(params.pool.head.weight, grad.pool.head.weight, v.pool.head.weight, lr_main_, momentum_);
  sgd_update(params.pool.head.bias, grad.pool.head.bias, v.pool.head.bias, lr_main_, momentum_);
  sgd_update_table(params.embeddings.annotators, grad.embeddings.annotators, v.embeddings.annotators, lr_main_,
                   momentum_);
  for (std::size_t d = 0; d < params.embeddings.demographics.size(); ++d)
    sgd_update_table(params.embeddings.demographics[d], grad.embeddings.demographics[d], v.embeddings.demographics[d],
                     lr_main_, momentum_);
}

bool EarlyStopping::update(std::size_t epoch, double metric)
{
  improved_ = metric < best_;
  if (improved_) {
    best_ = metric;
    best_epoch_ = epoch;
    bad_epochs_ = 0;
    return false;
  }
  ++bad_epochs_;
  return bad_epochs_ >= patience_;
}

nlohmann::json TrainingLog::to_json(bool include_timing) const
{
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"loss", e.mean_loss.to_json()},
                        {"phase", std::string(to_string(e.phase))},
                        {"running_load_std", e.running_load_std},
                        {"dev_mae", e.dev_mae ? nlohmann::json(*e.dev_mae) : nlohmann::json(nullptr)},
                        {"steps", e.steps}};
    if (include_timing) j["wall_time_seconds"] = e.wall_time_seconds;
    ep.push_back(std::move(j));
  }
  nlohmann::json phases = nlohmann::json::object();
  for (auto p : {Phase::A, Phase::B, Phase::C}) {
    const auto& w = schedule.weights(p);
    phases[std::string(to_string(p))] = {
        {"load", w.load}, {"orthogonality", w.orthogonality}, {"variance", w.variance}};
  }
  return {{"epochs", ep},
          {"best_epoch", best_epoch},
          {"early_stopped", early_stopped},
          {"schedule",
           {{"threshold_ab", schedule.threshold_ab},
            {"threshold_bc", schedule.threshold_bc},
            {"ema_decay", schedule.ema_decay},
            {"phases", phases}}}};
}

DivergenceError::DivergenceError(std::size_t epoch, std::size_t step, TrainingLog log)
    : std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step)),
      epoch_(epoch), step_(step), log_(std::move(log))
{
}

double mean_absolute_error(const DemMoE& model, const TextEmbeddingStore& store,
                           const std::vector<TrainingExample>& examples)
{
  if (examples.empty()) throw std::invalid_argument("mean_absolute_error: no examples");
  const auto& scale = model.schema().scale;
  double total = 0.0;
  for (const auto& ex : examples)
    total += std::abs(scale.clip(model.predict(store, ex.instance_id, ex.annotator_id, *ex.profile)) - ex.rating);
  return total / static_cast<double>(examples.size());
}

namespace {

void accumulate(LossBreakdown& sum, const LossBreakdown& x)
{
  sum.mse += x.mse;
  sum.kl_annotator += x.kl_annotator;
  sum.kl_demographic += x.kl_demographic;
  sum.load_std += x.load_std;
  sum.orthogonality += x.orthogonality;
  sum.variance += x.variance;
  sum.demo_specialization += x.demo_specialization;
  sum.total += x.total;
  sum.active_phase = x.active_phase;
  sum.weights = x.weights;
}

void scale_breakdown(LossBreakdown& b, double s)
{
  b.mse *= s;
  b.kl_annotator *= s;
  b.kl_demographic *= s;
  b.load_std *= s;
  b.orthogonality *= s;
  b.variance *= s;
  b.demo_specialization *= s;
  b.total *= s;
}

bool all_finite(const ModelParameters& g)
{
  if (!g.gate.weight.allFinite() || !g.gate.bias.allFinite() || !g.pool.head.weight.allFinite() ||
      !std::isfinite(g.pool.head.bias))
    return false;
  for (const auto& e : g.pool.experts)
    if (!e.w1.allFinite() || !e.b1.allFinite() || !e.w2.allFinite() || !e.b2.allFinite()) return false;
  auto finite = [](const GaussianEmbedding& e) { return e.mean.allFinite() && e.log_variance.allFinite(); };
  for (const auto& [id, e] : g.embeddings.annotators)
    if (!finite(e)) return false;
  for (const auto& table : g.embeddings.demographics)
    for (const auto& [v, e] : table)
      if (!finite(e)) return false;
  return true;
}

}  // namespace

TrainingResult train(DemMoE model, const TextEmbeddingStore& store, std::vector<TrainingExample> train_examples,
                     const std::vector<TrainingExample>& dev_examples, const TrainingOptions& options,
                     const EpochCallback& on_epoch)
{
  const auto& opt = options.optimizer;
  opt.validate();
  options.loss.validate();
  options.schedule.validate();

  std::vector<TrainingExample> examples;
  examples.reserve(train_examples.size());
  for (auto& ex : train_examples) {
    if (!std::isfinite(ex.weight) || ex.weight < 0)
      throw std::invalid_argument("sample weight must be finite and >= 0");
    if (ex.weight > 0) examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw std::invalid_argument("no training examples with positive weight");

  TrainingLog log;
  log.schedule = options.schedule;
  PhaseTracker tracker(options.schedule);
  SgdMomentum sgd(opt.lr_gate, opt.lr_main, opt.momentum);
  EarlyStopping stopper(opt.patience);
  DemMoE best = model;
  const auto noise_dim = static_cast<Eigen::Index>(model.noise_dim());
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(substream_seed(opt.seed, "shuffle", epoch)).shuffle(order);
    Rng noise_rng(substream_seed(opt.seed, "noise", epoch));

    EpochLog entry;
    entry.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      std::vector<TrainingExample> batch;
      std::vector<Eigen::VectorXd> noise;
      batch.reserve(end - start);
      noise.reserve(end - start);
      for (std::size_t n = start; n < end; ++n) {
        batch.push_back(examples[order[n]]);
        Eigen::VectorXd eps(noise_dim);
        noise_rng.fill_normal(std::span<double>(eps.data(), static_cast<std::size_t>(eps.size())));
        noise.push_back(std::move(eps));
      }
      ++global_step;
      LossEvaluation eval;
      try {
        eval = total_loss(model, store, batch, &noise, options.loss, tracker.weights(), tracker.phase());
      } catch (const NonFiniteError&) {
        throw DivergenceError(epoch, global_step, log);
      }
      if (!std::isfinite(eval.breakdown.total) || !all_finite(eval.gradient))
        throw DivergenceError(epoch, global_step, log);
      sgd.step(model.parameters(), eval.gradient);
      if (!all_finite(model.parameters())) throw DivergenceError(epoch, global_step, log);
      tracker.observe(eval.breakdown.load_std);
      accumulate(entry.mean_loss, eval.breakdown);
      ++entry.steps;
    }
    scale_breakdown(entry.mean_loss, 1.0 / static_cast<double>(entry.steps));
    entry.phase = tracker.phase();
    entry.running_load_std = tracker.running().value_or(0.0);

    bool stop = false;
    if (dev_examples.empty()) {
      best = model;
      log.best_epoch = epoch;
    } else {
      entry.dev_mae = mean_absolute_error(model, store, dev_examples);
      stop = stopper.update(epoch, *entry.dev_mae);
      if (stopper.improved()) {
        best = model;
        log.best_epoch = epoch;
      }
    }
    entry.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (stop) {
      log.early_stopped = true;
      break;
    }
  }
  return {std::move(best), std::move(log)};
}

}  // namespace demoe
