#include <cmath>
#include <set>

#include "advdial/models.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace advdial;

namespace {

Vocab tiny_vocab() {
  RawDialogue d;
  d.context = {{"alpha", "beta", "gamma"}, {"delta", "beta"}};
  d.response = {"epsilon", "zeta", "alpha", "eta"};
  return Vocab::build({d});
}

ModelDims tiny_dims() { return ModelDims{3, 4}; }

}  // namespace

TEST_CASE("zero generator is uniform per step") {
  auto vocab = tiny_vocab();
  auto gen = GeneratorModel::create_zero(vocab, tiny_dims());
  Context x = {{4, 5}, {6}};
  std::vector<int> y = {7, 8, Vocab::kEos};
  auto lp = generator_log_prob(gen, x, y);
  double expect = -std::log(static_cast<double>(vocab.size()));
  for (double v : lp) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("generator log-probs sum to minus nll") {
  auto vocab = tiny_vocab();
  auto gen = GeneratorModel::create(vocab, tiny_dims(), 42);
  Context x = {{4, 5, 6}};
  std::vector<int> y = {7, 4, 8, Vocab::kEos};
  auto lp = generator_log_prob(gen, x, y);
  double total = 0.0;
  for (double v : lp) total += v;
  CHECK(total == doctest::Approx(-generator_nll(gen, x, y).item()).epsilon(1e-10));
}

TEST_CASE("generator rejects out-of-vocab and empty responses") {
  auto vocab = tiny_vocab();
  auto gen = GeneratorModel::create(vocab, tiny_dims(), 1);
  CHECK_THROWS_WITH_AS(generator_log_prob(gen, {{4}}, {999}), "TokenOutOfVocab", Error);
  CHECK_THROWS_WITH_AS(generator_log_prob(gen, {{4}}, {}), "EmptyResponse", Error);
}

TEST_CASE("generator log-prob is invariant to surrounding evaluations") {
  auto vocab = tiny_vocab();
  auto gen = GeneratorModel::create(vocab, tiny_dims(), 7);
  Context x = {{4, 5}};
  std::vector<int> y = {6, 7, Vocab::kEos};
  auto alone = generator_log_prob(gen, x, y);
  // interleave other forwards, as batched evaluation would
  for (int i = 0; i < 3; ++i) generator_log_prob(gen, {{8}}, {4, Vocab::kEos});
  auto batched = generator_log_prob(gen, x, y);
  for (std::size_t t = 0; t < y.size(); ++t)
    CHECK(std::abs(alone[t] - batched[t]) <= 1e-10);
}

TEST_CASE("empty context falls back to unconditioned decoding") {
  auto vocab = tiny_vocab();
  auto gen = GeneratorModel::create(vocab, tiny_dims(), 3);
  auto lp = generator_log_prob(gen, {}, {4, Vocab::kEos});
  for (double v : lp) CHECK(std::isfinite(v));
}

TEST_CASE("zero discriminator scores one half") {
  auto vocab = tiny_vocab();
  auto disc = DiscriminatorModel::create_zero(vocab, tiny_dims());
  CHECK(discriminator_score(disc, {{4, 5}}, {6, 7}) == doctest::Approx(0.5));
  CHECK(discriminator_score(disc, {}, {8}) == doctest::Approx(0.5));
}

TEST_CASE("discriminator accepts partial sequences of length one") {
  auto vocab = tiny_vocab();
  auto disc = DiscriminatorModel::create(vocab, tiny_dims(), 9);
  double q = discriminator_score(disc, {{4, 5}}, {6});
  CHECK(q > 0.0);
  CHECK(q < 1.0);
}

TEST_CASE("discriminator rejects empty response") {
  auto vocab = tiny_vocab();
  auto disc = DiscriminatorModel::create(vocab, tiny_dims(), 9);
  CHECK_THROWS_WITH_AS(discriminator_score(disc, {{4}}, {}), "EmptyResponse", Error);
}

TEST_CASE("discriminator score is deterministic and in (0,1)") {
  auto vocab = tiny_vocab();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto disc = DiscriminatorModel::create(vocab, tiny_dims(), seed);
    double a = discriminator_score(disc, {{4, 5}, {6}}, {7, 8});
    double b = discriminator_score(disc, {{4, 5}, {6}}, {7, 8});
    CHECK(a == b);
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }
}

TEST_CASE("hierarchical encoding is order sensitive at the utterance level") {
  auto vocab = tiny_vocab();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto disc = DiscriminatorModel::create(vocab, tiny_dims(), seed);
    double ab = discriminator_score(disc, {{4, 5}, {6, 7}}, {8});
    double ba = discriminator_score(disc, {{6, 7}, {4, 5}}, {8});
    CHECK(ab != ba);
  }
}

TEST_CASE("zero critic outputs zero") {
  auto vocab = tiny_vocab();
  auto critic = CriticModel::create_zero(vocab, tiny_dims());
  CHECK(critic_value(critic, {{4, 5}}, {6, 7}) == doctest::Approx(0.0));
  CHECK(critic_value(critic, {{4, 5}}, {}) == doctest::Approx(0.0));
  CHECK(critic_value(critic, {}, {}) == doctest::Approx(0.0));
}

TEST_CASE("critic handles full sequences and prefixes with one model") {
  auto vocab = tiny_vocab();
  auto critic = CriticModel::create(vocab, tiny_dims(), 5);
  double full = critic_value(critic, {{4, 5}}, {6, 7, Vocab::kEos});
  double prefix = critic_value(critic, {{4, 5}}, {6});
  CHECK(std::isfinite(full));
  CHECK(std::isfinite(prefix));
  CHECK(full != prefix);
}

TEST_CASE("discriminator and critic gradients pass finite differences") {
  auto vocab = tiny_vocab();
  auto disc = DiscriminatorModel::create(vocab, tiny_dims(), 11);
  Context x = {{4, 5}, {6}};
  std::vector<int> y = {7, 8};
  auto dfn = [&] { return discriminator_score_t(disc, x, y); };
  CHECK(finite_difference_check(dfn, disc.params(), 1e-4) <= 1e-4);

  auto critic = CriticModel::create(vocab, tiny_dims(), 13);
  auto cfn = [&] { return critic_value_t(critic, x, y); };
  CHECK(finite_difference_check(cfn, critic.params(), 1e-4) <= 1e-4);
}

TEST_CASE("generator end-to-end gradient passes finite differences") {
  auto vocab = tiny_vocab();
  auto gen = GeneratorModel::create(vocab, tiny_dims(), 17);
  Context x = {{4, 5}, {6}};
  std::vector<int> y = {7, 8, Vocab::kEos};
  auto fn = [&] { return generator_nll(gen, x, y); };
  CHECK(finite_difference_check(fn, gen.params(), 1e-4) <= 1e-4);
}

TEST_CASE("zero language model is uniform and empty sequence scores zero") {
  auto vocab = tiny_vocab();
  auto lm = LanguageModel::create_zero(vocab, tiny_dims());
  std::vector<int> y = {4, 5, Vocab::kEos};
  double expect = -3.0 * std::log(static_cast<double>(vocab.size()));
  CHECK(lm_log_prob(lm, y) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(lm_log_prob(lm, {}) == doctest::Approx(0.0));
}

TEST_CASE("checkpoint round-trips parameters exactly") {
  testutil::TempDir tmp("ckpt");
  auto vocab = tiny_vocab();
  auto gen = GeneratorModel::create(vocab, tiny_dims(), 23);
  auto ckpt = make_checkpoint("generator", vocab.hash(), 0xabcdULL, gen.named_params());
  ckpt.save(tmp.path("gen.ckpt"));
  auto loaded_ckpt = Checkpoint::load(tmp.path("gen.ckpt"));
  CHECK(loaded_ckpt.config_hash == 0xabcdULL);
  auto loaded = load_generator(loaded_ckpt, vocab);
  auto a = gen.named_params();
  auto b = loaded.named_params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.values() == b[i].second.values());
  }
  // saved twice, identical bytes
  ckpt.save(tmp.path("gen2.ckpt"));
  CHECK(testutil::read_file(tmp.path("gen.ckpt")) ==
        testutil::read_file(tmp.path("gen2.ckpt")));
}

TEST_CASE("checkpoint loading rejects a mismatched vocab hash") {
  testutil::TempDir tmp("ckpt");
  auto vocab = tiny_vocab();
  auto gen = GeneratorModel::create(vocab, tiny_dims(), 29);
  auto ckpt = make_checkpoint("generator", vocab.hash() ^ 1, 0, gen.named_params());
  ckpt.save(tmp.path("gen.ckpt"));
  auto loaded = Checkpoint::load(tmp.path("gen.ckpt"));
  CHECK_THROWS_WITH_AS(load_generator(loaded, vocab), "VocabHashMismatch", Error);
}

TEST_CASE("checkpoint kinds are enforced") {
  testutil::TempDir tmp("ckpt");
  auto vocab = tiny_vocab();
  auto disc = DiscriminatorModel::create(vocab, tiny_dims(), 31);
  auto ckpt = make_checkpoint("discriminator", vocab.hash(), 0, disc.named_params());
  ckpt.save(tmp.path("d.ckpt"));
  auto loaded = Checkpoint::load(tmp.path("d.ckpt"));
  CHECK_THROWS_AS(load_generator(loaded, vocab), Error);
}

TEST_CASE("trainer model parameter names are disjoint across kinds") {
  auto vocab = tiny_vocab();
  std::set<std::string> names;
  std::size_t total = 0;
  auto count = [&](const std::vector<std::pair<std::string, Tensor>>& ps) {
    for (const auto& [n, t] : ps) {
      names.insert(n);
      ++total;
    }
  };
  count(GeneratorModel::create(vocab, tiny_dims(), 1).named_params());
  count(DiscriminatorModel::create(vocab, tiny_dims(), 1).named_params());
  count(CriticModel::create(vocab, tiny_dims(), 1).named_params());
  count(LanguageModel::create(vocab, tiny_dims(), 1).named_params());
  CHECK(names.size() == total);
}

TEST_CASE("model creation is deterministic per seed") {
  auto vocab = tiny_vocab();
  auto a = GeneratorModel::create(vocab, tiny_dims(), 77);
  auto b = GeneratorModel::create(vocab, tiny_dims(), 77);
  auto pa = a.params();
  auto pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].values() == pb[i].values());
}
