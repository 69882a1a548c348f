#include "csc/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "csc/error.hpp"

namespace csc {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw CscError("learning_rate must be positive");
  if (batch_size < 1) throw CscError("batch_size must be positive");
  if (max_steps < 0) throw CscError("max_steps must be non-negative");
  if (eval_interval < 1) throw CscError("eval_interval must be positive");
  if (max_steps > 0 && eval_interval > max_steps)
    throw CscError("eval_interval must not exceed max_steps");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 ||
      adam_beta2 >= 1.0)
    throw CscError("Adam beta parameters must be in [0,1)");
  if (adam_eps <= 0.0) throw CscError("Adam epsilon must be positive");
  if (mlm_weight < 0.0) throw CscError("mlm_weight must be non-negative");
  if (policy) policy->validate();
}

TrainConfig TrainConfig::load(const std::string& path) {
  return load(path, TrainConfig{});
}

TrainConfig TrainConfig::load(const std::string& path, TrainConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CscError("cannot open train config: " + path);
  std::string line;
  std::size_t lineno = 0;
  auto parse_double = [&lineno](const std::string& v) {
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw CscError("line " + std::to_string(lineno) +
                     ": unparsable number `" + v + "`");
    }
  };
  auto parse_int = [&lineno](const std::string& v) {
    try {
      std::size_t used = 0;
      const long x = std::stol(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return static_cast<int>(x);
    } catch (const std::exception&) {
      throw CscError("line " + std::to_string(lineno) +
                     ": unparsable integer `" + v + "`");
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CscError("line " + std::to_string(lineno) +
                     ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "learning_rate") base.learning_rate = parse_double(value);
    else if (key == "batch_size") base.batch_size = parse_int(value);
    else if (key == "max_steps") base.max_steps = parse_int(value);
    else if (key == "eval_interval") base.eval_interval = parse_int(value);
    else if (key == "seed") base.seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "adam_beta1") base.adam_beta1 = parse_double(value);
    else if (key == "adam_beta2") base.adam_beta2 = parse_double(value);
    else if (key == "adam_eps") base.adam_eps = parse_double(value);
    else if (key == "mlm_weight") base.mlm_weight = parse_double(value);
    else if (key == "policy") {
      if (value == "none") base.policy.reset();
      else base.policy = MaskPolicy::parse(value);
    } else {
      throw CscError("line " + std::to_string(lineno) +
                     ": unknown config key `" + key + "`");
    }
  }
  base.validate();
  return base;
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write train config: " + path);
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "learning_rate=" << num(learning_rate) << '\n';
  out << "batch_size=" << batch_size << '\n';
  out << "max_steps=" << max_steps << '\n';
  out << "eval_interval=" << eval_interval << '\n';
  out << "seed=" << seed << '\n';
  out << "adam_beta1=" << num(adam_beta1) << '\n';
  out << "adam_beta2=" << num(adam_beta2) << '\n';
  out << "adam_eps=" << num(adam_eps) << '\n';
  out << "mlm_weight=" << num(mlm_weight) << '\n';
  out << "policy=" << (policy ? policy->format() : std::string("none")) << '\n';
  if (!out) throw CscError("write failed: " + path);
}

void save_trace(const std::string& path, const TrainTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write trace: " + path);
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::size_t next_eval = 0;
  for (std::size_t s = 0; s < trace.loss.size(); ++s) {
    const int step = static_cast<int>(s) + 1;
    out << step << ',' << num(trace.loss[s]) << ',' << num(trace.grad_norm[s]);
    if (next_eval < trace.eval_f1.size() &&
        trace.eval_f1[next_eval].first == step) {
      out << ',' << num(trace.eval_f1[next_eval].second);
      ++next_eval;
    }
    out << '\n';
  }
  if (!out) throw CscError("write failed: " + path);
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0),
      v_(size, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw CscError("Adam state size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }
}

namespace {

// Shuffled pass over indices; reshuffles at each epoch boundary.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, Rng& rng) : perm_(n), cursor_(n), rng_(&rng) {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  }
  std::size_t next() {
    if (cursor_ >= perm_.size()) {
      shuffle(perm_, *rng_);
      cursor_ = 0;
    }
    return perm_[cursor_++];
  }

 private:
  std::vector<std::size_t> perm_;
  std::size_t cursor_;
  Rng* rng_;
};

MaskPolicy mono_mask_policy() {
  MaskPolicy p;
  p.rate = 0.2;
  p.mask_token = MaskTokenKind::Mask;
  p.position_policy = PositionPolicy::Any;
  p.mix_mask_probability = 1.0;
  return p;
}

// Assembles one parallel batch, corrupting sources through the policy.
PackedBatch next_parallel_batch(const std::vector<ParallelExample>& data,
                                EpochSampler& sampler, int batch_size,
                                const MaskPolicy* policy,
                                const ConfusionSet* cs, const Vocab& vocab,
                                Rng& corrupt_rng) {
  PackedBatch batch;
  for (int i = 0; i < batch_size; ++i) {
    const auto& ex = data[sampler.next()];
    if (policy) {
      const ParallelExample corrupted =
          apply_mask_policy(ex, *policy, cs, vocab, corrupt_rng);
      batch.add_all_positions(corrupted.source, corrupted.target);
    } else {
      batch.add_all_positions(ex.source, ex.target);
    }
  }
  return batch;
}

// Assembles one MLM batch from clean sentences: corrupt through the given
// policy (default 20% MASK at any position), supervised on the corrupted
// positions only. Sentences that draw no corruption are skipped; the batch
// may come back empty (vanishingly rare).
PackedBatch next_mono_batch(const std::vector<Sentence>& data,
                            EpochSampler& sampler, int batch_size,
                            const MaskPolicy& policy, const ConfusionSet* cs,
                            const Vocab& vocab, Rng& mask_rng) {
  PackedBatch batch;
  for (int i = 0; i < batch_size; ++i) {
    const Sentence& clean = data[sampler.next()];
    ParallelExample ex;
    ex.source = clean;
    ex.target = clean;
    const ParallelExample masked =
        apply_mask_policy(ex, policy, cs, vocab, mask_rng);
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(clean.size()), 0);
    bool any = false;
    for (int p = 0; p < clean.size(); ++p)
      if (masked.source.ids[p] != clean.ids[p]) {
        flags[static_cast<std::size_t>(p)] = 1;
        any = true;
      }
    if (any) batch.add(masked.source, clean, flags);
  }
  return batch;
}

TrainTrace run_loop(MlmModel& model,
                    const std::vector<ParallelExample>* parallel,
                    const std::vector<Sentence>* monolingual,
                    double mono_weight, const Vocab& vocab,
                    const ConfusionSet* cs, const TrainConfig& cfg,
                    const MaskPolicy* mono_policy_override,
                    const EvalFn& eval) {
  cfg.validate();
  if (parallel && parallel->empty()) throw CscError("empty training corpus");
  if (monolingual && monolingual->empty())
    throw CscError("empty monolingual corpus");
  const MaskPolicy* policy = cfg.policy ? &*cfg.policy : nullptr;
  if (policy && policy->mix_mask_probability < 1.0 && cs == nullptr)
    throw CscError("confusion corruption requires a confusion set");
  const MaskPolicy mono_policy =
      mono_policy_override ? *mono_policy_override : mono_mask_policy();
  if (monolingual && mono_policy.mix_mask_probability < 1.0 && cs == nullptr)
    throw CscError("confusion corruption requires a confusion set");

  // Independent streams so that enabling one consumer never shifts
  // another's draws.
  Rng base(cfg.seed);
  Rng order_rng = base.derive(1);
  Rng corrupt_rng = base.derive(2);
  Rng mono_order_rng = base.derive(3);
  Rng mono_mask_rng = base.derive(4);

  EpochSampler parallel_sampler(parallel ? parallel->size() : 1, order_rng);
  EpochSampler mono_sampler(monolingual ? monolingual->size() : 1,
                            mono_order_rng);

  Adam opt(model.params().size(), cfg.learning_rate, cfg.adam_beta1,
           cfg.adam_beta2, cfg.adam_eps);
  TrainTrace trace;
  trace.loss.reserve(static_cast<std::size_t>(cfg.max_steps));
  trace.grad_norm.reserve(static_cast<std::size_t>(cfg.max_steps));

  std::vector<double> combined;
  for (int step = 0; step < cfg.max_steps; ++step) {
    double total_loss = 0.0;
    combined.assign(model.params().size(), 0.0);

    if (parallel) {
      const PackedBatch batch =
          next_parallel_batch(*parallel, parallel_sampler, cfg.batch_size,
                              policy, cs, vocab, corrupt_rng);
      GradientRecord rec = model.backward(batch);
      total_loss += rec.loss;
      for (std::size_t i = 0; i < combined.size(); ++i)
        combined[i] += rec.grads[i];
    }
    if (monolingual && mono_weight > 0.0) {
      const PackedBatch batch =
          next_mono_batch(*monolingual, mono_sampler, cfg.batch_size,
                          mono_policy, cs, vocab, mono_mask_rng);
      if (batch.num_examples() > 0) {
        GradientRecord rec = model.backward(batch);
        total_loss += mono_weight * rec.loss;
        for (std::size_t i = 0; i < combined.size(); ++i)
          combined[i] += mono_weight * rec.grads[i];
      }
    }

    double norm_sq = 0.0;
    for (double g : combined) norm_sq += g * g;
    const double grad_norm = std::sqrt(norm_sq);
    if (!std::isfinite(total_loss) || !std::isfinite(grad_norm))
      throw CscError("training diverged at step " + std::to_string(step + 1));

    opt.step(model.params(), combined);
    trace.loss.push_back(total_loss);
    trace.grad_norm.push_back(grad_norm);
    if (eval && (step + 1) % cfg.eval_interval == 0)
      trace.eval_f1.emplace_back(step + 1, eval(model));
  }
  return trace;
}

}  // namespace

TrainTrace train_csc(MlmModel& model,
                     const std::vector<ParallelExample>& parallel,
                     const Vocab& vocab, const ConfusionSet* cs,
                     const TrainConfig& cfg, const EvalFn& eval) {
  return run_loop(model, &parallel, nullptr, 0.0, vocab, cs, cfg, nullptr,
                  eval);
}

std::pair<TrainTrace, TrainTrace> train_two_stage(
    MlmModel& model, const std::vector<ParallelExample>& stage1,
    const std::vector<ParallelExample>& stage2, const Vocab& vocab,
    const ConfusionSet* cs, const TrainConfig& cfg1, const TrainConfig& cfg2,
    const EvalFn& eval) {
  TrainTrace first = train_csc(model, stage1, vocab, cs, cfg1, eval);
  TrainTrace second = train_csc(model, stage2, vocab, cs, cfg2, eval);
  return {std::move(first), std::move(second)};
}

TrainTrace train_transfer(MlmModel& model,
                          const std::vector<ParallelExample>& parallel,
                          const std::vector<Sentence>& monolingual,
                          const Vocab& vocab, const ConfusionSet* cs,
                          const TrainConfig& cfg, const EvalFn& eval) {
  return run_loop(model, &parallel,
                  cfg.mlm_weight > 0.0 ? &monolingual : nullptr,
                  cfg.mlm_weight, vocab, cs, cfg, nullptr, eval);
}

TrainTrace train_mlm(MlmModel& model, const std::vector<Sentence>& monolingual,
                     const Vocab& vocab, const TrainConfig& cfg,
                     const ConfusionSet* cs, const EvalFn& eval) {
  // cfg.policy, when present, overrides the default masking scheme; with a
  // mix_mask_probability below one this is BERT-style pretraining where some
  // corrupted positions hold a plausible wrong token rather than MASK.
  const MaskPolicy* mono_policy = cfg.policy ? &*cfg.policy : nullptr;
  return run_loop(model, nullptr, &monolingual, 1.0, vocab, cs, cfg,
                  mono_policy, eval);
}

GradientRecord gradient_norm_probe(const MlmModel& model,
                                   const ParallelExample& example,
                                   const MaskPolicy* policy, const Vocab& vocab,
                                   const ConfusionSet* cs, Rng& rng) {
  PackedBatch batch;
  if (policy) {
    const ParallelExample corrupted =
        apply_mask_policy(example, *policy, cs, vocab, rng);
    batch.add_all_positions(corrupted.source, corrupted.target);
  } else {
    batch.add_all_positions(example.source, example.target);
  }
  return model.backward(batch);
}

}  // namespace csc
