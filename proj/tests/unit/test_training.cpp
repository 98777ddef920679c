#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "uav/train/trainer.hpp"

using namespace uav;

namespace {

TransformerConfig toy_config(int d = 16) {
  TransformerConfig c;
  c.d_model = d;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq = 32;
  return c;
}

MlpAdapterConfig toy_adapter(int d_donor = 16) {
  MlpAdapterConfig c;
  c.d_donor = d_donor;
  c.d_decoder = 16;
  c.n_soft = 2;
  return c;
}

template <std::floating_point T>
BasicTransformer<T> frozen(BasicTransformer<T> m) {
  m.params().set_all_trainable(false);
  return m;
}

template <std::floating_point T>
BasicTransformer<T> toy_donor(std::uint64_t seed, int d = 16, const char* id = "donor") {
  return frozen(BasicTransformer<T>::init(toy_config(d), RngState(seed), InitScheme::fan_in, id));
}

template <std::floating_point T>
Stage1Example stage1_example(const BasicTransformer<T>& donor, std::vector<int> tokens, int position) {
  auto a = extract_activation(donor, tokens, 1, position);
  return {std::move(tokens), position, std::move(a)};
}

Activation fake_activation(std::uint64_t seed, int d = 16) {
  RngState rng(seed);
  Activation a;
  for (int i = 0; i < d; ++i) a.vector.push_back(static_cast<float>(rng.normal()));
  return a;
}

// -log softmax(row)[target], in double.
template <std::floating_point T>
double nll_row(const BasicTensor<T>& logits, std::size_t row, int target) {
  const auto v = logits.dim(1);
  double mx = -1e300;
  for (std::size_t k = 0; k < v; ++k) mx = std::max(mx, static_cast<double>(logits.at(row, k)));
  double z = 0.0;
  for (std::size_t k = 0; k < v; ++k) z += std::exp(static_cast<double>(logits.at(row, k)) - mx);
  return -(static_cast<double>(logits.at(row, static_cast<std::size_t>(target))) - mx - std::log(z));
}

TrainPlan quick_plan(int s1, int s2) {
  TrainPlan p;
  p.seed = 4;
  p.stage1 = {s1, 1e-3};
  p.stage2 = {s2, 3e-4};
  p.batch_size = 2;
  p.eval_every = 10;
  p.val_max_examples = 8;
  return p;
}

std::vector<Stage1Example> stage1_set(const Transformer& donor, int n, std::uint64_t seed) {
  RngState rng(seed);
  std::vector<Stage1Example> out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> t;
    for (int k = 0; k < 6; ++k) t.push_back(static_cast<int>('a' + rng.below(6)));
    out.push_back(stage1_example(donor, t, static_cast<int>(rng.below(t.size()))));
  }
  return out;
}

std::vector<Stage2Example> stage2_set(const Transformer& donor, int n, std::uint64_t seed) {
  RngState rng(seed);
  std::vector<Stage2Example> out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> t;
    for (int k = 0; k < 6; ++k) t.push_back(static_cast<int>('a' + rng.below(6)));
    out.push_back({extract_activation(donor, t, 1, 5), encode("q?"), {t[0], t[5], kEosToken}, TaskTag::factual});
  }
  return out;
}

}  // namespace

TEST_CASE("stage-1 loss with a uniform output head is ln 256", "[training][loss]") {
  const auto donor = toy_donor<double>(1);
  auto decoder = BasicTransformer<double>::init(toy_config(), RngState(2));
  for (const char* name : {"head.weight", "head.bias"}) {
    auto& t = decoder.params().at(name);
    for (auto& x : t.mutable_data()) x = 0.0;
  }
  decoder = frozen(std::move(decoder));
  const auto adapter = BasicAdapter<double>::init(toy_adapter(), RngState(3));
  RngState rng;
  const auto ex = stage1_example(donor, encode("hello"), 3);
  CHECK(std::abs(stage1_loss(adapter, decoder, ex, Mode::eval, rng).item() - std::log(256.0)) < 1e-12);
}

TEST_CASE("stage-1 loss equals explicit per-step summation", "[training][loss]") {
  const auto donor = toy_donor<double>(1);
  const auto decoder = frozen(BasicTransformer<double>::init(toy_config(), RngState(5)));
  const auto adapter = BasicAdapter<double>::init(toy_adapter(), RngState(6));
  RngState rng;
  const std::vector<int> tokens{'x', 'y', 'z'};
  const auto prefix = adapter.forward(extract_activation(donor, tokens, 1, 2), Mode::eval, rng);
  const std::size_t n = prefix.count();

  SECTION("three tokens, position 2") {
    const auto ex = stage1_example(donor, tokens, 2);
    const std::vector<int> history{'x', 'y'};
    const auto logits = decoder.forward(history, &prefix, Mode::eval, rng);
    const double oracle = (nll_row(logits, n - 1, 'x') + nll_row(logits, n, 'y') + nll_row(logits, n + 1, 'z')) / 3.0;
    CHECK(std::abs(stage1_loss(adapter, decoder, ex, Mode::eval, rng).item() - oracle) < 1e-6);
  }
  SECTION("position 0 is a single term") {
    const auto ex = stage1_example(donor, tokens, 0);
    const auto p0 = adapter.forward(ex.activation, Mode::eval, rng);
    const auto logits = decoder.forward(std::vector<int>{}, &p0, Mode::eval, rng);
    CHECK(std::abs(stage1_loss(adapter, decoder, ex, Mode::eval, rng).item() - nll_row(logits, n - 1, 'x')) < 1e-12);
  }
}

TEST_CASE("stage-1 provenance checks", "[training][loss]") {
  const auto donor = toy_donor<float>(1);
  const auto decoder = frozen(Transformer::init(toy_config(), RngState(5)));
  const auto adapter = Adapter::init(toy_adapter(), RngState(6));
  RngState rng;
  auto ex = stage1_example(donor, encode("abcd"), 2);
  auto wrong_tokens = ex;
  wrong_tokens.tokens[0] = 'z';
  CHECK_THROWS_AS(stage1_loss(adapter, decoder, wrong_tokens, Mode::eval, rng), ProvenanceError);
  auto wrong_pos = ex;
  wrong_pos.position = 1;
  CHECK_THROWS_AS(stage1_loss(adapter, decoder, wrong_pos, Mode::eval, rng), ProvenanceError);
  auto outside = ex;
  outside.position = 9;
  CHECK_THROWS_AS(stage1_loss(adapter, decoder, outside, Mode::eval, rng), IndexError);
}

TEST_CASE("stage-2 loss covers answer positions only", "[training][loss]") {
  const auto decoder = frozen(BasicTransformer<double>::init(toy_config(), RngState(7)));
  const auto adapter = BasicAdapter<double>::init(toy_adapter(), RngState(8));
  RngState rng;
  const auto act = fake_activation(9);
  const auto prefix = adapter.forward(act, Mode::eval, rng);
  const std::size_t n = prefix.count();

  SECTION("single-token answer is one NLL term at the separator row") {
    const Stage2Example ex{act, encode("who"), {kEosToken}, TaskTag::factual};
    std::vector<int> input = ex.question;
    input.push_back(kSepToken);
    const auto logits = decoder.forward(input, &prefix, Mode::eval, rng);
    CHECK(std::abs(stage2_loss(adapter, decoder, ex, Mode::eval, rng).item() - nll_row(logits, n + 3, kEosToken)) < 1e-12);
  }
  SECTION("multi-token answer matches the answer-row oracle") {
    const Stage2Example ex{act, encode("ab"), {'y', 'e', 's', kEosToken}, TaskTag::factual};
    const std::vector<int> input{'a', 'b', kSepToken, 'y', 'e', 's'};
    const auto logits = decoder.forward(input, &prefix, Mode::eval, rng);
    double oracle = 0.0;
    for (std::size_t j = 0; j < ex.answer.size(); ++j) oracle += nll_row(logits, n + 2 + j, ex.answer[j]);
    oracle /= static_cast<double>(ex.answer.size());
    CHECK(std::abs(stage2_loss(adapter, decoder, ex, Mode::eval, rng).item() - oracle) < 1e-9);
  }
  SECTION("layout masks prefix and question rows") {
    const Stage2Example ex{act, encode("ab"), {'y', kEosToken}, TaskTag::factual};
    std::vector<int> input, targets;
    stage2_layout(ex, n, input, targets);
    CHECK(input == std::vector<int>{'a', 'b', kSepToken, 'y'});
    CHECK(targets == std::vector<int>{kIgnoreTarget, kIgnoreTarget, kIgnoreTarget, kIgnoreTarget, 'y', kEosToken});
  }
  SECTION("empty answer is rejected") {
    const Stage2Example ex{act, encode("ab"), {}, TaskTag::factual};
    CHECK_THROWS_AS(stage2_loss(adapter, decoder, ex, Mode::eval, rng), ValidationError);
  }
}

TEST_CASE("masked rows receive exactly zero logit gradient", "[training][loss]") {
  RngState rng(3);
  std::vector<double> v(5 * 7);
  for (auto& x : v) x = rng.normal();
  BasicTensor<double> logits({5, 7}, v, true);
  const std::vector<int> targets{kIgnoreTarget, 2, kIgnoreTarget, 6, kIgnoreTarget};
  cross_entropy(logits, targets).backward();
  for (const std::size_t row : {0u, 2u, 4u})
    for (std::size_t k = 0; k < 7; ++k) CHECK(logits.grad()[row * 7 + k] == 0.0);
  double nonzero = 0.0;
  for (std::size_t k = 0; k < 7; ++k) nonzero += std::abs(logits.grad()[7 + k]);
  CHECK(nonzero > 0.0);
}

TEST_CASE("teacher forcing: a step's term ignores later tokens", "[training][loss]") {
  const auto decoder = frozen(BasicTransformer<double>::init(toy_config(), RngState(7)));
  RngState rng;
  const std::vector<int> a{'a', 'b', 'c', 'd'}, b{'a', 'b', 'x', 'y'};
  const auto la = decoder.forward(a, Mode::eval, rng), lb = decoder.forward(b, Mode::eval, rng);
  for (std::size_t row = 0; row < 2; ++row)
    for (std::size_t k = 0; k < 256; ++k) CHECK(la.at(row, k) == lb.at(row, k));
}

TEST_CASE("stage-1 training freezes the decoder and is deterministic", "[training]") {
  const auto donor = toy_donor<float>(1);
  const auto decoder = frozen(Transformer::init(toy_config(), RngState(5)));
  const auto train = stage1_set(donor, 12, 1), val = stage1_set(donor, 4, 2);
  const auto donor_digest = donor.params().digest();
  const auto decoder_digest = decoder.params().digest();

  SECTION("zero steps leave the adapter untouched") {
    auto adapter = Adapter::init(toy_adapter(), RngState(6));
    const auto before = adapter.params().digest();
    TrainLog log;
    const auto r = train_stage1(adapter, decoder, train, val, quick_plan(0, 0), log);
    CHECK(adapter.params().digest() == before);
    CHECK(r.steps == 0);
    CHECK(log.records().empty());
  }
  SECTION("digests and reruns") {
    auto a1 = Adapter::init(toy_adapter(), RngState(6));
    auto a2 = Adapter::init(toy_adapter(), RngState(6));
    const auto init = a1.params().digest();
    TrainLog l1, l2;
    const auto r = train_stage1(a1, decoder, train, val, quick_plan(20, 0), l1);
    train_stage1(a2, decoder, train, val, quick_plan(20, 0), l2);
    CHECK(a1.params().digest() != init);
    CHECK(a1.params().digest() == a2.params().digest());
    CHECK(decoder.params().digest() == decoder_digest);
    CHECK(donor.params().digest() == donor_digest);
    CHECK(r.final_val_loss.has_value());
    std::size_t val_rows = 0;
    for (const auto& rec : l1.records()) val_rows += rec.split == "val";
    CHECK(val_rows == 2);
  }
  SECTION("a trainable decoder is refused") {
    auto open = decoder;
    open.params().set_all_trainable(true);
    auto adapter = Adapter::init(toy_adapter(), RngState(6));
    TrainLog log;
    CHECK_THROWS_AS(train_stage1(adapter, open, train, val, quick_plan(2, 0), log), StateError);
  }
  SECTION("activation width must match the adapter") {
    auto adapter = Adapter::init(toy_adapter(24), RngState(6));
    TrainLog log;
    CHECK_THROWS_AS(train_stage1(adapter, decoder, train, val, quick_plan(2, 0), log), ConfigError);
  }
}

TEST_CASE("a gradient on a frozen parameter is a hard failure", "[training]") {
  ParamStore store;
  RngState rng(1);
  store.add_normal("w", {2, 2}, 1.0, rng, false);
  store.at("w").mutable_grad()[0] = 1.0f;
  CHECK_THROWS_AS(store.assert_no_frozen_grads("toy"), FreezeViolation);
}

TEST_CASE("stage-2 overfits one example and keeps the backbone", "[training]") {
  const auto donor = toy_donor<float>(1);
  // A d=16 head at unit scale caps the logit margin; sharpen it so the frozen
  // toy backbone can express a confident answer.
  auto sharp = Transformer::init(toy_config(), RngState(5), InitScheme::fan_in);
  for (auto& x : sharp.params().at("head.weight").mutable_data()) x *= 6.0f;
  const auto decoder = frozen(std::move(sharp));
  const auto one = stage2_set(donor, 1, 3);
  auto tuned = apply_lora(decoder, LoraSpec{}, RngState(2));
  const auto backbone = tuned.params().digest();
  auto adapter = Adapter::init(toy_adapter(), RngState(6));
  auto plan = quick_plan(0, 1000);
  plan.stage2.lr = 3e-3;
  plan.batch_size = 1;
  plan.eval_every = 1000;
  TrainLog log;
  const auto r = train_stage2(adapter, tuned, one, one, plan, log);
  REQUIRE(r.final_val_loss.has_value());
  CHECK(*r.final_val_loss < 0.05);
  CHECK(tuned.params().digest() == backbone);

  RngState rng;
  const auto prefix = adapter.forward(one[0].activation, Mode::eval, rng);
  auto prompt = one[0].question;
  prompt.push_back(kSepToken);
  const auto out = greedy_decode(tuned, &prefix, prompt, 8, kEosToken);
  INFO("greedy: " << decode(out));
  CHECK(out == std::vector<int>(one[0].answer.begin(), one[0].answer.end() - 1));

  auto bare = decoder;
  TrainLog l2;
  CHECK_THROWS_AS(train_stage2(adapter, bare, one, one, plan, l2), StateError);
}

TEST_CASE("adapter-only transfer keeps LoRA and backbone frozen", "[training][aot]") {
  const auto donor_a = toy_donor<float>(1);
  const auto donor_b = toy_donor<float>(9, 24, "donor-b");
  const auto decoder = frozen(Transformer::init(toy_config(), RngState(5)));

  auto source = apply_lora(decoder, LoraSpec{}, RngState(2));
  auto adapter_a = Adapter::init(toy_adapter(), RngState(6));
  TrainLog log;
  train_stage2(adapter_a, source, stage2_set(donor_a, 16, 1), stage2_set(donor_a, 4, 2), quick_plan(0, 30), log);

  Transformer target = decoder;
  target.attach_lora(source.lora().spec, source.lora().params);
  target.lora().params.set_all_trainable(false);
  const auto lora_digest = target.lora().params.digest();
  const auto backbone = target.params().digest();
  const auto donor_digest = donor_b.params().digest();

  auto plan = quick_plan(20, 300);
  plan.strategy = Strategy::adapter_only_transfer;
  plan.source_lora_digest = lora_digest;
  plan.stage2.lr = 1e-3;
  plan.eval_every = 25;
  plan.val_max_examples = 16;
  const auto train_b = stage2_set(donor_b, 32, 3), val_b = stage2_set(donor_b, 16, 4);

  SECTION("wider donor trains without touching the decoder") {
    auto adapter_b = Adapter::init(toy_adapter(24), RngState(7));
    TrainLog tl;
    const auto r = adapter_only_transfer(adapter_b, target, stage1_set(donor_b, 8, 5), stage1_set(donor_b, 4, 6), train_b, val_b, plan, tl);
    CHECK(r.warmup.has_value());
    CHECK(target.lora().params.digest() == lora_digest);
    CHECK(target.params().digest() == backbone);
    CHECK(donor_b.params().digest() == donor_digest);
    std::vector<double> vals;
    for (const auto& rec : tl.records())
      if (rec.stage == "aot" && rec.split == "val") vals.push_back(rec.loss);
    REQUIRE(vals.size() >= 4);
    for (const double v : vals) CHECK(std::isfinite(v));
    // Smoothed trend: mean of the last two validation points below the first two.
    CHECK((vals[vals.size() - 1] + vals[vals.size() - 2]) < (vals[0] + vals[1]));
  }
  SECTION("plan contract") {
    auto adapter_b = Adapter::init(toy_adapter(24), RngState(7));
    TrainLog tl;
    auto wrong = plan;
    wrong.source_lora_digest = std::string(64, '0');
    CHECK_THROWS_AS(adapter_only_transfer(adapter_b, target, {}, {}, train_b, val_b, wrong, tl), ProvenanceError);
    auto full = plan;
    full.strategy = Strategy::full;
    CHECK_THROWS_AS(adapter_only_transfer(adapter_b, target, {}, {}, train_b, val_b, full, tl), ConfigError);
    auto missing = plan;
    missing.source_lora_digest.clear();
    CHECK_THROWS_AS(missing.validate(), ConfigError);
  }
}

TEST_CASE("layer-wise training", "[training][layerwise]") {
  const auto donor = toy_donor<float>(1);
  const auto decoder = frozen(Transformer::init(toy_config(), RngState(5)));
  const auto data = [&](int layer) {
    LayerData d;
    RngState rng(static_cast<std::uint64_t>(layer) + 1);
    for (int i = 0; i < 8; ++i) {
      std::vector<int> t;
      for (int k = 0; k < 5; ++k) t.push_back(static_cast<int>('a' + rng.below(5)));
      auto a = extract_activation(donor, t, layer, 4);
      (i < 6 ? d.stage1_train : d.stage1_val).push_back({t, 4, a});
      (i < 6 ? d.stage2_train : d.stage2_val).push_back({a, encode("q"), {t[0], kEosToken}, TaskTag::factual});
    }
    return d;
  };
  TrainLog log;
  const auto out = train_layerwise<float>(quick_plan(5, 5), {0, 1}, 2, toy_adapter(), decoder, LoraSpec{}, data, log);
  REQUIRE(out.size() == 2);
  CHECK(out.at(0).adapter.params().digest() != out.at(1).adapter.params().digest());
  for (const auto& [layer, r] : out) {
    REQUIRE(r.final_val_loss().has_value());
    CHECK(std::isfinite(*r.final_val_loss()));
    CHECK(!r.lora.empty());
  }
  bool saw0 = false, saw1 = false;
  for (const auto& rec : log.records()) {
    saw0 = saw0 || rec.stage.rfind("layer0/", 0) == 0;
    saw1 = saw1 || rec.stage.rfind("layer1/", 0) == 0;
  }
  CHECK((saw0 && saw1));
  CHECK_THROWS_AS(train_layerwise<float>(quick_plan(1, 0), {1, 1}, 2, toy_adapter(), decoder, LoraSpec{}, data, log), ConfigError);
  CHECK_THROWS_AS(train_layerwise<float>(quick_plan(1, 0), {2}, 2, toy_adapter(), decoder, LoraSpec{}, data, log), IndexError);
}

TEST_CASE("optimizer arithmetic", "[training][optim]") {
  SECTION("first AdamW step moves each weight by lr, decaying matrices only") {
    ParamStore store;
    store.add_constant("vec", {1}, 1.0f, true);
    store.add_constant("mat", {1, 1}, 1.0f, true);
    store.at("vec").mutable_grad()[0] = 0.5f;
    store.at("mat").mutable_grad()[0] = 0.5f;
    AdamWConfig cfg;
    cfg.clip_norm = 0.0;
    OptimState state;
    adamw_step<float>(cfg, state, {{"g", &store}}, 0.1);
    // Bias-corrected m / sqrt(v) = 1 on the first step.
    CHECK(store.at("vec").data()[0] == Catch::Approx(0.9).margin(1e-6));
    CHECK(store.at("mat").data()[0] == Catch::Approx(1.0 - 0.1 * 0.01 - 0.1).margin(1e-6));
    CHECK(state.buffers.size() == 2);
  }
  SECTION("frozen tensors get no buffers") {
    ParamStore store;
    store.add_constant("frozen", {2}, 1.0f, false);
    OptimState state;
    adamw_step<float>(AdamWConfig{}, state, {{"g", &store}}, 0.1);
    CHECK(state.buffers.empty());
    CHECK(store.at("frozen").data()[0] == 1.0f);
  }
  SECTION("clipping returns the pre-clip norm") {
    ParamStore store;
    store.add_constant("w", {2}, 0.0f, true);
    store.at("w").mutable_grad()[0] = 3.0f;
    store.at("w").mutable_grad()[1] = 4.0f;
    OptimState state;
    CHECK(adamw_step<float>(AdamWConfig{}, state, {{"g", &store}}, 0.1) == Catch::Approx(5.0));
  }
  SECTION("linear warmup") {
    CHECK(warmup_lr(1.0, 0, 100, 0.05) == Catch::Approx(0.2));
    CHECK(warmup_lr(1.0, 4, 100, 0.05) == Catch::Approx(1.0));
    CHECK(warmup_lr(1.0, 50, 100, 0.05) == 1.0);
    CHECK(warmup_lr(1.0, 0, 100, 0.0) == 1.0);
  }
}
