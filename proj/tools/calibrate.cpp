// Development harness: runs preset experiments and prints the split
// metrics the acceptance thresholds are judged against.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <optional>
#include <string>

#include "csc/evaluation.hpp"
#include "csc/rng.hpp"
#include "csc/mlm.hpp"
#include "csc/synthlab.hpp"
#include "csc/training.hpp"

using namespace csc;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

struct RunResult {
  EvalReport report;
  TrainTrace trace;
  double seconds = 0.0;
};

void probe_model(const MlmModel& model, const IncExcData& data);

int g_dmodel = 64, g_layers = 2, g_heads = 4, g_ff = 256;

MlmModel pretrain_model(const IncExcData& data, std::uint64_t seed, int steps,
                        double q) {
  MlmConfig mc;
  mc.vocab_size = data.language.vocab.size();
  mc.seed = seed * 7919 + 13;
  mc.dim = g_dmodel;
  mc.layers = g_layers;
  mc.heads = g_heads;
  mc.ff_dim = g_ff;
  MlmModel model(mc);
  if (steps <= 0) return model;
  TrainConfig cfg;
  cfg.max_steps = steps;
  cfg.seed = seed * 15485863 + 3;
  MaskPolicy pp;
  pp.rate = 0.2;
  pp.position_policy = PositionPolicy::Any;
  pp.mix_mask_probability = q;
  cfg.policy = pp;
  const auto t0 = std::chrono::steady_clock::now();
  train_mlm(model, data.pretrain, data.language.vocab,
            cfg, q < 1.0 ? &data.synth_confusions : nullptr);
  std::printf("pretrained %d steps q=%.2f (%.1fs)\n", steps, q,
              seconds_since(t0));
  return model;
}

RunResult run_incexc(const IncExcData& data, const MlmModel& init,
                     std::uint64_t seed,
                     const std::optional<MaskPolicy>& policy, int steps,
                     bool probe = false) {
  const auto t0 = std::chrono::steady_clock::now();
  MlmModel model = init;
  TrainConfig cfg;
  cfg.max_steps = steps;
  cfg.seed = seed * 104729 + 7;
  cfg.policy = policy;
  RunResult r;
  r.trace = train_csc(model, data.train, data.language.vocab, nullptr, cfg);
  const auto preds = predict_all(model, data.test);
  r.report = score_split(preds, data.train, EvalLevel::Character);
  r.seconds = seconds_since(t0);
  if (probe) probe_model(model, data);
  return r;
}

// Splits test errors into head/tail by looking up the injected pair in the
// channel, then reports the model's behaviour at the gold position both with
// the corrupted token in place and with it replaced by MASK.
void probe_model(const MlmModel& model, const IncExcData& data) {
  auto pair_kind = [&](int src, int tgt) -> const char* {
    for (const auto& p : data.channel.head_pairs)
      if (p.first == src && p.second == tgt) return "head";
    for (const auto& p : data.channel.tail_pairs)
      if (p.first == src && p.second == tgt) return "tail";
    return "other";
  };
  struct Tally {
    int n = 0, fix = 0, copy = 0, other = 0;
    int mask_fix = 0, alien_fix = 0, top2 = 0;
    double p_right = 0, p_copy = 0;
  };
  Tally head, tail;
  const int mask_id = data.language.vocab.mask_id;
  Rng alien_rng(12345);
  for (const auto& ex : data.test) {
    for (int i = 0; i < ex.source.size(); ++i) {
      if (ex.source[i] == ex.target[i]) continue;
      Tally& t = *(std::strcmp(pair_kind(ex.source[i], ex.target[i]), "head") == 0
                       ? &head
                       : &tail);
      ++t.n;
      const auto top = model.predict_topk(ex.source, i, 2);
      const int pred = top[0].first;
      if (pred == ex.target[i]) ++t.fix;
      else if (pred == ex.source[i]) ++t.copy;
      else ++t.other;
      if (top[0].first == ex.target[i] || top[1].first == ex.target[i])
        ++t.top2;
      const auto probs = model.forward(ex.source)[static_cast<std::size_t>(i)];
      t.p_right += probs[static_cast<std::size_t>(ex.target[i])];
      t.p_copy += probs[static_cast<std::size_t>(ex.source[i])];
      Sentence masked = ex.source;
      masked.ids[i] = mask_id;
      if (model.predict(masked, i) == ex.target[i]) ++t.mask_fix;
      // Alien center: a uniformly random ordinary token that is neither the
      // source nor the target; measures whether restoration machinery
      // survives arbitrary off-context centers.
      Sentence alien = ex.source;
      int a;
      do {
        a = 4 + (int)alien_rng.uniform_index((std::size_t)(data.language.vocab.size() - 4));
      } while (a == ex.source[i] || a == ex.target[i]);
      alien.ids[i] = a;
      if (model.predict(alien, i) == ex.target[i]) ++t.alien_fix;
    }
  }
  auto show = [](const char* name, const Tally& t) {
    std::printf(
        "  %s errors: n=%d fix=%.3f copy=%.3f other=%.3f top2=%.3f "
        "P(right)=%.3f P(copy)=%.3f | mask=%.3f alien=%.3f\n",
        name, t.n, t.fix / double(t.n), t.copy / double(t.n),
        t.other / double(t.n), t.top2 / double(t.n), t.p_right / t.n,
        t.p_copy / t.n, t.mask_fix / double(t.n), t.alien_fix / double(t.n));
  };
  show("head", head);
  show("tail", tail);
}

void print_result(const char* name, const RunResult& r) {
  std::printf(
      "%-14s F1=%.4f  I-F1=%.4f  E-F1=%.4f  det-F1=%.4f  P=%.4f R=%.4f  "
      "(%.1fs)\n",
      name, r.report.correction.f1, r.report.i_f1.value_or(-1),
      r.report.e_f1.value_or(-1), r.report.detection.f1,
      r.report.correction.precision, r.report.correction.recall, r.seconds);
}

}  // namespace

int main(int argc, char** argv) {
  std::uint64_t seed = 0;
  int steps = 3000, pretrain_steps = 3000;
  double q = 0.8;
  bool ft_only = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strncmp(argv[i], "--seed=", 7) == 0) seed = std::stoull(argv[i] + 7);
    if (std::strncmp(argv[i], "--steps=", 8) == 0) steps = std::stoi(argv[i] + 8);
    if (std::strncmp(argv[i], "--pretrain=", 11) == 0) pretrain_steps = std::stoi(argv[i] + 11);
    if (std::strncmp(argv[i], "--q=", 4) == 0) q = std::stod(argv[i] + 4);
    if (std::strncmp(argv[i], "--dim=", 6) == 0) g_dmodel = std::stoi(argv[i] + 6);
    if (std::strncmp(argv[i], "--layers=", 9) == 0) g_layers = std::stoi(argv[i] + 9);
    if (std::strncmp(argv[i], "--heads=", 8) == 0) g_heads = std::stoi(argv[i] + 8);
    if (std::strncmp(argv[i], "--ff=", 5) == 0) g_ff = std::stoi(argv[i] + 5);
    if (std::strcmp(argv[i], "--ft-only") == 0) ft_only = true;
  }
  std::printf("model dim=%d layers=%d heads=%d ff=%d\n", g_dmodel, g_layers,
              g_heads, g_ff);

  std::printf("building incexc preset (seed %llu)\n",
              static_cast<unsigned long long>(seed));
  const auto t0 = std::chrono::steady_clock::now();
  const IncExcData data = make_incexc_preset(seed);
  std::printf("preset built in %.1fs; train=%zu test=%zu mono=%zu vocab=%d\n",
              seconds_since(t0), data.train.size(), data.test.size(),
              data.mono.size(), data.language.vocab.size());

  const MlmModel init = pretrain_model(data, seed, pretrain_steps, q);
  std::printf("pretrained model behaviour:\n");
  probe_model(init, data);

  const RunResult ft = run_incexc(data, init, seed, std::nullopt, steps, true);
  print_result("FT", ft);
  if (ft_only) return 0;

  MaskPolicy mft;
  mft.rate = 0.2;
  const RunResult masked = run_incexc(data, init, seed, mft, steps, true);
  print_result("MFT(p=0.2)", masked);

  for (double p : {0.05, 0.5}) {
    MaskPolicy v = mft;
    v.rate = p;
    char name[32];
    std::snprintf(name, sizeof name, "MFT(p=%.2f)", p);
    print_result(name, run_incexc(data, init, seed, v, steps));
  }
  {
    MaskPolicy v = mft;
    v.position_policy = PositionPolicy::ErrorOnly;
    print_result("pos=error", run_incexc(data, init, seed, v, steps));
    v.position_policy = PositionPolicy::Any;
    print_result("pos=any", run_incexc(data, init, seed, v, steps));
  }
  {
    MaskPolicy v = mft;
    v.mask_token = MaskTokenKind::Unused;
    print_result("tok=UNUSED", run_incexc(data, init, seed, v, steps));
    v.mask_token = MaskTokenKind::Unk;
    print_result("tok=UNK", run_incexc(data, init, seed, v, steps));
  }

  double ft_mean = 0, mft_mean = 0;
  for (int s = 499; s < 1500 && s < (int)ft.trace.grad_norm.size(); ++s) {
    ft_mean += ft.trace.grad_norm[s];
    mft_mean += masked.trace.grad_norm[s];
  }
  std::printf("grad norm mean steps 500-1500: FT=%.5f MFT=%.5f ratio=%.2f\n",
              ft_mean / 1001, mft_mean / 1001, mft_mean / ft_mean);
  return 0;
}
