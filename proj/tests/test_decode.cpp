#include <algorithm>
#include <cmath>
#include <set>

#include "advdial/decode.hpp"
#include "advdial/trainer.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace advdial;

namespace {

Vocab synth_vocab(std::size_t n_lines = 60) {
  return Vocab::build(synth::generate(13, n_lines));
}

Context random_context(const Vocab& vocab, Rng& rng) {
  Context x;
  std::size_t utts = 1 + rng.uniform_index(2);
  for (std::size_t u = 0; u < utts; ++u) {
    std::vector<int> toks;
    std::size_t len = 2 + rng.uniform_index(5);
    for (std::size_t i = 0; i < len; ++i)
      toks.push_back(Vocab::kReserved +
                     static_cast<int>(rng.uniform_index(vocab.size() - Vocab::kReserved)));
    x.push_back(std::move(toks));
  }
  return x;
}

}  // namespace

TEST_CASE("greedy decoding is deterministic") {
  auto vocab = synth_vocab();
  auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 3);
  Rng rng(5);
  Context x = random_context(vocab, rng);
  auto a = greedy_decode(gen, vocab, x, 12);
  auto b = greedy_decode(gen, vocab, x, 12);
  CHECK(a == b);
  CHECK(!a.empty());
}

TEST_CASE("greedy on a one-hot distribution emits the forced token") {
  auto vocab = synth_vocab();
  auto gen = GeneratorModel::create_zero(vocab, ModelDims{4, 6});
  int forced = Vocab::kReserved + 2;
  gen.out_b.values()[static_cast<std::size_t>(forced)] = 50.0;  // distribution ~ one-hot
  auto y = greedy_decode(gen, vocab, {{Vocab::kReserved}}, 6);
  REQUIRE(y.size() == 6);  // forced token is never EOS, so truncation at max length
  for (int tok : y) CHECK(tok == forced);
}

TEST_CASE("greedy equals width-1 beam with zero penalties") {
  auto vocab = synth_vocab();
  DecodeConfig cfg;
  cfg.beam_width = 1;
  cfg.gamma_sib = 0.0;
  cfg.gamma_rep = 0.0;
  cfg.max_len = 10;
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 100 + trial % 7);
    Context x = random_context(vocab, rng);
    auto greedy = greedy_decode(gen, vocab, x, cfg.max_len);
    auto beam = beam_search(gen, vocab, x, cfg);
    REQUIRE(beam.size() == 1);
    CHECK(beam[0].tokens == greedy);
  }
}

TEST_CASE("sibling rank penalty arithmetic") {
  // engineer first-step log-probs: a = -1.0, b = -1.2, the rest far below
  RawDialogue raw;
  raw.context = {{"q"}};
  raw.response = {"a", "b"};
  auto vocab = Vocab::build({raw});
  int tok_a = vocab.id("a"), tok_b = vocab.id("b");
  auto gen = GeneratorModel::create_zero(vocab, ModelDims{3, 4});
  auto& bias = gen.out_b.values();
  for (double& v : bias) v = -100.0;
  double rest = 1.0 - std::exp(-1.0) - std::exp(-1.2);
  bias[static_cast<std::size_t>(tok_a)] = -1.0;
  bias[static_cast<std::size_t>(tok_b)] = -1.2;
  bias[Vocab::kEos] = std::log(rest * 0.9);
  bias[Vocab::kUnk] = std::log(rest * 0.1);

  DecodeConfig cfg;
  cfg.beam_width = 2;
  cfg.gamma_sib = 0.5;
  cfg.gamma_rep = 0.0;
  cfg.max_len = 1;
  auto hyps = beam_search(gen, vocab, {{vocab.id("q")}}, cfg);
  REQUIRE(hyps.size() == 2);
  CHECK(hyps[0].tokens == std::vector<int>{tok_a});
  CHECK(hyps[0].adjusted == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(hyps[1].tokens == std::vector<int>{tok_b});
  CHECK(hyps[1].adjusted == doctest::Approx(-1.7).epsilon(1e-9));
}

TEST_CASE("large repeat penalty suppresses repeated word types") {
  auto vocab = synth_vocab();
  DecodeConfig cfg;
  cfg.beam_width = 3;
  cfg.gamma_sib = 0.0;
  cfg.gamma_rep = 10.0;
  cfg.max_len = 12;
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 500 + trial % 9);
    Context x = random_context(vocab, rng);
    auto hyps = beam_search(gen, vocab, x, cfg);
    REQUIRE(!hyps.empty());
    std::set<int> seen;
    for (int tok : hyps[0].tokens) {
      if (tok == Vocab::kEos || vocab.is_stop(tok)) continue;
      CHECK(seen.insert(tok).second);
    }
  }
}

TEST_CASE("beam search matches exhaustive enumeration on a tiny space") {
  RawDialogue raw;
  raw.context = {{"ctx"}};
  raw.response = {"t1", "t2", "t3", "t4", "t5"};
  auto vocab = Vocab::build({raw});  // 5 content tokens
  auto gen = GeneratorModel::create(vocab, ModelDims{3, 4}, 99);
  DecodeConfig cfg;
  cfg.beam_width = 100000;  // keep everything: beam becomes exhaustive
  cfg.gamma_sib = 0.7;
  cfg.gamma_rep = 1.3;
  cfg.max_len = 4;
  Context x = {{vocab.id("ctx")}};

  // independent recursive enumeration of every decodable sequence
  struct Leaf {
    std::vector<int> tokens;
    double adjusted;
  };
  std::vector<Leaf> leaves;
  EncodedContext enc = encode_context(gen, x);
  auto walk = [&](auto&& self, const std::vector<int>& prefix, const Tensor& state,
                  int prev, double adjusted, const std::set<int>& types) -> void {
    if (prefix.size() == cfg.max_len) {
      leaves.push_back({prefix, adjusted});
      return;
    }
    auto [next_state, probs] = decoder_step(gen, enc, prev, state);
    std::vector<std::pair<double, int>> kids;
    for (std::size_t v = 0; v < probs.size(); ++v) {
      if (!decodable_token(static_cast<int>(v))) continue;
      kids.emplace_back(std::log(probs.at(v)), static_cast<int>(v));
    }
    std::sort(kids.begin(), kids.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t rank = 0; rank < kids.size(); ++rank) {
      auto [lp, tok] = kids[rank];
      double step = lp - cfg.gamma_sib * static_cast<double>(rank);
      if (tok != Vocab::kEos && !vocab.is_stop(tok) && types.count(tok)) step -= cfg.gamma_rep;
      std::vector<int> child = prefix;
      child.push_back(tok);
      if (tok == Vocab::kEos) {
        leaves.push_back({child, adjusted + step});
        continue;
      }
      std::set<int> child_types = types;
      if (!vocab.is_stop(tok)) child_types.insert(tok);
      self(self, child, next_state, tok, adjusted + step, child_types);
    }
  };
  walk(walk, {}, enc.final_state, Vocab::kBos, 0.0, {});
  std::sort(leaves.begin(), leaves.end(), [](const Leaf& a, const Leaf& b) {
    if (a.adjusted != b.adjusted) return a.adjusted > b.adjusted;
    return a.tokens < b.tokens;
  });

  auto hyps = beam_search(gen, vocab, x, cfg);
  REQUIRE(hyps.size() == leaves.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    CHECK(hyps[i].tokens == leaves[i].tokens);
    CHECK(hyps[i].adjusted == doctest::Approx(leaves[i].adjusted).epsilon(1e-10));
    bool ok = hyps[i].ended_with_eos ? hyps[i].tokens.back() == Vocab::kEos
                                     : hyps[i].tokens.size() == cfg.max_len;
    CHECK(ok);
    if (i > 0) CHECK(hyps[i - 1].adjusted >= hyps[i].adjusted);
  }
}

TEST_CASE("beam output size and termination properties") {
  auto vocab = synth_vocab();
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 600 + trial);
    DecodeConfig cfg;
    cfg.beam_width = 1 + rng.uniform_index(6);
    cfg.max_len = 1 + rng.uniform_index(8);
    auto hyps = beam_search(gen, vocab, random_context(vocab, rng), cfg);
    CHECK(!hyps.empty());
    CHECK(hyps.size() <= cfg.beam_width);
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      bool ok = hyps[i].ended_with_eos ? hyps[i].tokens.back() == Vocab::kEos
                                       : hyps[i].tokens.size() == cfg.max_len;
      CHECK(ok);
      if (i > 0) CHECK(hyps[i - 1].adjusted >= hyps[i].adjusted);
    }
  }
}

TEST_CASE("decoders never emit PAD or BOS") {
  auto vocab = synth_vocab();
  Rng rng(59);
  for (int trial = 0; trial < 30; ++trial) {
    auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 700 + trial);
    Context x = random_context(vocab, rng);
    for (int tok : greedy_decode(gen, vocab, x, 8)) {
      CHECK(tok != Vocab::kPad);
      CHECK(tok != Vocab::kBos);
    }
    for (int tok : sample_decode(gen, vocab, x, 1.0, trial, 8)) {
      CHECK(tok != Vocab::kPad);
      CHECK(tok != Vocab::kBos);
    }
    DecodeConfig cfg;
    cfg.beam_width = 3;
    cfg.max_len = 8;
    for (const auto& h : beam_search(gen, vocab, x, cfg)) {
      for (int tok : h.tokens) {
        CHECK(tok != Vocab::kPad);
        CHECK(tok != Vocab::kBos);
      }
    }
  }
}

TEST_CASE("sampling is reproducible and near-greedy at tiny temperature") {
  auto vocab = synth_vocab();
  auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 83);
  Rng rng(61);
  Context x = random_context(vocab, rng);
  auto a = sample_decode(gen, vocab, x, 1.0, 42, 10);
  auto b = sample_decode(gen, vocab, x, 1.0, 42, 10);
  CHECK(a == b);
  auto cold = sample_decode(gen, vocab, x, 1e-3, 42, 10);
  CHECK(cold == greedy_decode(gen, vocab, x, 10));
}

TEST_CASE("first sampled token matches the model distribution") {
  auto vocab = synth_vocab();
  auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 21);
  Context x = {{Vocab::kReserved + 1, Vocab::kReserved + 4}};
  // model's first-step distribution over decodable tokens
  EncodedContext enc = encode_context(gen, x);
  auto [state, probs] = decoder_step(gen, enc, Vocab::kBos, enc.final_state);
  std::vector<double> expected;
  std::vector<int> ids;
  double z = 0.0;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    if (!decodable_token(static_cast<int>(v))) continue;
    ids.push_back(static_cast<int>(v));
    expected.push_back(probs.at(v));
    z += probs.at(v);
  }
  const int n = 10000;
  for (double& e : expected) e *= n / z;
  std::vector<double> observed(ids.size(), 0.0);
  for (int s = 0; s < n; ++s) {
    auto y = sample_decode(gen, vocab, x, 1.0, static_cast<std::uint64_t>(s), 2);
    auto it = std::find(ids.begin(), ids.end(), y[0]);
    REQUIRE(it != ids.end());
    observed[static_cast<std::size_t>(it - ids.begin())] += 1.0;
  }
  CHECK(chi2_gof_pvalue(observed, expected) > 0.01);
}

TEST_CASE("mmi rerank reductions") {
  auto vocab = synth_vocab();
  auto backward = GeneratorModel::create(vocab, ModelDims{4, 6}, 11);
  Context x = {{Vocab::kReserved + 2, Vocab::kReserved + 3}};

  std::vector<BeamHypothesis> nbest;
  for (int i = 0; i < 4; ++i) {
    BeamHypothesis h;
    h.tokens = {Vocab::kReserved + 4 + i, Vocab::kReserved + 6, Vocab::kEos};
    h.raw_log_prob = -1.0 - 0.5 * i;  // sorted by per-token forward score
    h.adjusted = h.raw_log_prob;
    nbest.push_back(h);
  }

  auto same = mmi_backward_rerank(nbest, backward, vocab, x, 0.0);
  for (std::size_t i = 0; i < nbest.size(); ++i) CHECK(same[i].tokens == nbest[i].tokens);

  auto bwd_only = mmi_backward_rerank(nbest, backward, vocab, x, 1.0);
  // order must follow the backward score alone
  std::vector<double> scores;
  for (const auto& h : bwd_only) scores.push_back(h.adjusted);
  for (std::size_t i = 1; i < scores.size(); ++i) CHECK(scores[i - 1] >= scores[i]);
}

TEST_CASE("mmi rerank changes some top-1 at lambda one half") {
  // needs context-sensitive models: briefly pretrained forward and backward
  // generators on the synthetic corpus
  auto raws = synth::generate(91, 360);
  auto vocab = Vocab::build(std::vector<RawDialogue>(raws.begin(), raws.begin() + 300));
  std::vector<Dialogue> all;
  for (const auto& r : raws) all.push_back(tokenize_dialogue(r, vocab));
  std::vector<Dialogue> train(all.begin(), all.begin() + 300);
  std::vector<Dialogue> heldout(all.begin() + 300, all.end());

  TrainerOptions opts;
  opts.dims = ModelDims{8, 12};
  opts.mle_epochs = 1;
  auto gen = GeneratorModel::create(vocab, opts.dims, 19);
  pretrain_generator(gen, train, heldout, vocab, opts, 19);
  auto backward = GeneratorModel::create(vocab, opts.dims, 20);
  auto bt = reverse_dialogues(train);
  auto bh = reverse_dialogues(heldout);
  pretrain_generator(backward, bt, bh, vocab, opts, 20);

  DecodeConfig cfg;
  cfg.beam_width = 4;
  cfg.gamma_sib = 0.2;
  cfg.max_len = 14;
  int changed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Context& x = heldout[static_cast<std::size_t>(trial) % heldout.size()].context;
    auto hyps = beam_search(gen, vocab, x, cfg);
    auto reranked = mmi_backward_rerank(hyps, backward, vocab, x, 0.5);
    if (reranked.front().tokens != hyps.front().tokens) ++changed;
  }
  CHECK(changed >= 1);
}

TEST_CASE("anti-LM with zero weight equals plain beam search") {
  auto vocab = synth_vocab();
  auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 29);
  auto lm = LanguageModel::create(vocab, ModelDims{4, 6}, 30);
  DecodeConfig cfg;
  cfg.beam_width = 3;
  cfg.max_len = 8;
  cfg.anti_lm_weight = 0.0;
  Rng rng(73);
  for (int trial = 0; trial < 20; ++trial) {
    Context x = random_context(vocab, rng);
    auto plain = beam_search(gen, vocab, x, cfg);
    auto anti = anti_lm_beam(gen, lm, vocab, x, cfg);
    REQUIRE(plain.size() == anti.size());
    for (std::size_t i = 0; i < plain.size(); ++i) {
      CHECK(plain[i].tokens == anti[i].tokens);
      CHECK(plain[i].adjusted == doctest::Approx(anti[i].adjusted).epsilon(1e-12));
    }
  }
}

TEST_CASE("anti-LM weight monotonically pressures LM log-prob down") {
  auto vocab = synth_vocab();
  auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 37);
  auto lm = LanguageModel::create(vocab, ModelDims{4, 6}, 38);
  Rng rng(79);
  std::vector<Context> contexts;
  for (int i = 0; i < 100; ++i) contexts.push_back(random_context(vocab, rng));
  std::vector<double> weights = {0.0, 0.1, 0.5};
  std::vector<double> means;
  for (double w : weights) {
    DecodeConfig cfg;
    cfg.beam_width = 3;
    cfg.max_len = 8;
    cfg.anti_lm_weight = w;
    double total = 0.0;
    for (const auto& x : contexts) {
      auto hyps = anti_lm_beam(gen, lm, vocab, x, cfg);
      std::vector<int> y = hyps.front().tokens;
      if (!y.empty() && y.back() == Vocab::kEos) y.pop_back();
      if (!y.empty()) total += lm_log_prob(lm, y) / static_cast<double>(y.size());
    }
    means.push_back(total / static_cast<double>(contexts.size()));
  }
  CHECK(means[0] >= means[1] - 1e-9);
  CHECK(means[1] >= means[2] - 1e-9);
}

TEST_CASE("anti-LM output still terminates") {
  auto vocab = synth_vocab();
  auto gen = GeneratorModel::create(vocab, ModelDims{4, 6}, 43);
  auto lm = LanguageModel::create(vocab, ModelDims{4, 6}, 44);
  DecodeConfig cfg;
  cfg.beam_width = 2;
  cfg.max_len = 9;
  cfg.anti_lm_weight = 0.4;
  Rng rng(83);
  for (int trial = 0; trial < 20; ++trial) {
    auto hyps = anti_lm_beam(gen, lm, vocab, random_context(vocab, rng), cfg);
    REQUIRE(!hyps.empty());
    bool ok = hyps.front().ended_with_eos ? hyps.front().tokens.back() == Vocab::kEos
                                          : hyps.front().tokens.size() == cfg.max_len;
    CHECK(ok);
  }
}

TEST_CASE("decode file round-trips") {
  testutil::TempDir tmp("decode");
  std::vector<DecodedLine> lines(2);
  lines[0].dialogue.context = {{"tell", "me"}, {"the", "river"}};
  lines[0].dialogue.response = {"ok", "then", "."};
  lines[0].score = -1.234567;
  lines[1].dialogue.context = {{"what", "now"}};
  lines[1].dialogue.response = {"nothing", "much", "."};
  lines[1].score = 0.5;
  write_decode_file(tmp.path("d.txt"), lines);
  auto back = read_decode_file(tmp.path("d.txt"));
  REQUIRE(back.size() == 2);
  CHECK(back[0].dialogue.context == lines[0].dialogue.context);
  CHECK(back[0].dialogue.response == lines[0].dialogue.response);
  CHECK(back[0].score == doctest::Approx(-1.234567));
  CHECK(back[1].dialogue.context == lines[1].dialogue.context);
}
