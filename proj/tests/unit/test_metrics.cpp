#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "avg/data.hpp"
#include "avg/error.hpp"
#include "avg/metrics.hpp"
#include "avg/toyface.hpp"

using namespace avg;
using namespace avg::metrics;
namespace fs = std::filesystem;

namespace {

// Top-down memoized edit distance, structurally different from the iterative
// rolling-row version under test.
template <typename T>
int64_t oracle_edit(const std::vector<T>& a, const std::vector<T>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> memo((n + 1) * (m + 1), -1);
  std::function<int64_t(size_t, size_t)> go = [&](size_t i, size_t j) -> int64_t {
    if (i == n) return static_cast<int64_t>(m - j);
    if (j == m) return static_cast<int64_t>(n - i);
    int64_t& slot = memo[i * (m + 1) + j];
    if (slot >= 0) return slot;
    if (a[i] == b[j]) return slot = go(i + 1, j + 1);
    return slot = std::min({go(i + 1, j), go(i, j + 1), go(i + 1, j + 1)}) + 1;
  };
  return go(0, 0);
}

int64_t oracle_edit_str(const std::string& a, const std::string& b) {
  return oracle_edit(std::vector<char>(a.begin(), a.end()),
                     std::vector<char>(b.begin(), b.end()));
}

std::string rand_string(Rng& rng, int64_t min_len, int64_t max_len) {
  static const char pool[] = "abc ";
  int64_t len = min_len + static_cast<int64_t>(rng.below(uint64_t(max_len - min_len + 1)));
  std::string s;
  for (int64_t i = 0; i < len; ++i) s.push_back(pool[rng.below(4)]);
  return s;
}

std::vector<std::string> rand_phonemes(Rng& rng, int64_t max_len) {
  const auto& inv = lang::phoneme_inventory();
  std::vector<std::string> out(rng.below(uint64_t(max_len + 1)));
  for (auto& s : out) s = inv[rng.below(inv.size())].label;
  return out;
}

std::string rand_text(Rng& rng, const std::vector<std::string>& lex_words) {
  std::string text;
  int64_t words = 1 + static_cast<int64_t>(rng.below(3));
  for (int64_t w = 0; w < words; ++w) {
    if (w) text.push_back(' ');
    if (rng.below(2) == 0) {
      text += lex_words[rng.below(lex_words.size())];
    } else {
      int64_t len = 1 + static_cast<int64_t>(rng.below(4));
      for (int64_t i = 0; i < len; ++i) text.push_back(static_cast<char>('a' + rng.below(26)));
    }
  }
  return text;
}

std::string tmp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p.string();
}

const data::Manifest& fixture_manifest() {
  static data::Manifest m = [] {
    data::CorpusParams p;
    p.dir = tmp_dir("avg_metrics_fix");
    p.num_subjects = 2;
    p.sentences_per_subject = 10;
    p.words_min = 2;
    p.words_max = 3;
    p.fps = 25.0;
    p.sample_rate = 8000.0;
    p.val_fraction = 0.2;
    p.test_fraction = 0.2;
    return data::generate_synthetic_corpus(p, 21);
  }();
  return m;
}

struct EvalFixture {
  mesh::MeshTopology topo = mesh::toyface_topology();
  Tensor tmpl = mesh::toyface_template();
  nn::ParamStore ps;
  Rng init_rng{11};
  anim::Animator model;
  expert::Expert judge;
  std::unique_ptr<audio::SpeechEncoder> enc = audio::make_logmel_encoder(8, 50.0);
  EvalOptions opt;

  static anim::AnimatorConfig anim_cfg(int64_t subjects, int64_t verts) {
    anim::AnimatorConfig a;
    a.model_dim = 16;
    a.layers = 1;
    a.heads = 2;
    a.dropout = 0.0;
    a.max_seq = 256;
    a.feature_dim = 8;
    a.num_subjects = subjects;
    a.vertex_count = verts;
    return a;
  }
  static expert::ExpertConfig judge_cfg() {
    expert::ExpertConfig e;
    e.width = 16;
    e.visual_channels = 2;
    e.decoder_layers = 1;
    e.heads = 2;
    e.dropout = 0.0;
    e.label_smoothing = 0.0;
    e.crop_size = 24;
    e.feature_dim = 8;
    return e;
  }

  explicit EvalFixture(int64_t subjects)
      : model(anim_cfg(subjects, mesh::kToyfaceVertices), &ps, init_rng),
        judge(judge_cfg(), &ps, init_rng) {
    opt.cam.pixels_per_mm = 0.27;
    opt.cam.cx = 24.0;
    opt.cam.cy = 24.0;
    opt.cam.height = 48;
    opt.cam.width = 48;
    opt.sigma = 1e-4;
    opt.margin = 0.3;
    opt.crop_size = 24;
  }
};

// Speech features aligned to the mesh frame count, as the trainer feeds them.
Tensor aligned_features(const data::LoadedSample& s, double fps, audio::SpeechEncoder& enc) {
  audio::AudioFeatures f = audio::extract_features(s.wav, enc);
  return expert::fit_rows(audio::resample_features(f, fps).features, s.vertices.num_frames());
}

}  // namespace

TEST_CASE("edit distance matches a memoized recursive oracle") {
  Rng rng(401);
  for (int trial = 0; trial < 1000; ++trial) {
    std::string a = rand_string(rng, 0, 12), b = rand_string(rng, 0, 12);
    CHECK(edit_distance(a, b) == oracle_edit_str(a, b));
  }
  // token-sequence overloads share the same core
  std::vector<int> u{1, 2, 3}, v{2, 3, 4};
  CHECK(edit_distance(u, v) == 2);
  std::vector<std::string> p{"p", "ae", "t"}, q{"b", "ae", "t"};
  CHECK(edit_distance(p, q) == 1);
}

TEST_CASE("character error rate fixtures") {
  CHECK(cer("bob pat", "bob pat") == 0.0);
  CHECK(cer("kitten", "sitting") == 3.0 / 7.0);
  CHECK(cer("", "ab") == 1.0);
  CHECK(cer("abcd", "ab") == 1.0);  // rate may exceed 1 on long hypotheses
  CHECK_THROWS_AS(cer("x", ""), ContractError);
}

TEST_CASE("viseme error rate merges shape classes") {
  const auto& lex = lang::builtin_lexicon();
  const auto& map = lang::builtin_viseme_map();
  CHECK(ver("bob pat", "bob pat", lex, map) == 0.0);
  // /p/ and /b/ share the bilabial viseme: different text, same mouth shapes
  CHECK(ver("pat", "bat", lex, map) == 0.0);
  CHECK(cer("pat", "bat") == 1.0 / 3.0);
  // /k/ is not bilabial
  CHECK(ver("cat", "bat", lex, map) > 0.0);
  CHECK_THROWS_AS(ver("pat", "", lex, map), ContractError);
  CHECK_THROWS_AS(ver("pat", "'", lex, map), ContractError);
}

TEST_CASE("viseme collapse never increases edit distance") {
  const auto& map = lang::builtin_viseme_map();
  Rng rng(402);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> a = rand_phonemes(rng, 12), b = rand_phonemes(rng, 12);
    int64_t before = edit_distance(a, b);
    int64_t after = edit_distance(lang::to_visemes(a, map), lang::to_visemes(b, map));
    CHECK(after <= before);
    CHECK(after == oracle_edit(lang::to_visemes(a, map), lang::to_visemes(b, map)));
  }
}

TEST_CASE("ver equals the oracle on random word strings") {
  const auto& lex = lang::builtin_lexicon();
  const auto& map = lang::builtin_viseme_map();
  std::vector<std::string> words;
  for (const auto& [w, ph] : lex) words.push_back(w);
  Rng rng(403);
  for (int trial = 0; trial < 300; ++trial) {
    std::string hyp = rand_text(rng, words), ref = rand_text(rng, words);
    auto hv = lang::to_visemes(lang::g2p(hyp, lex), map);
    auto rv = lang::to_visemes(lang::g2p(ref, lex), map);
    REQUIRE(!rv.empty());
    double expected = static_cast<double>(oracle_edit(hv, rv)) / static_cast<double>(rv.size());
    CHECK(ver(hyp, ref, lex, map) == expected);
  }
}

TEST_CASE("worst lip deviation averages over frames") {
  mesh::MeshTopology topo = mesh::toyface_topology();
  Tensor tmpl = mesh::toyface_template();
  const int64_t V = topo.vertex_count;
  auto two_frames = [&] {
    mesh::VertexSequence s;
    s.fps = 25.0;
    s.frames = Tensor({2, V, 3});
    for (int64_t t = 0; t < 2; ++t)
      std::copy(tmpl.data(), tmpl.data() + tmpl.numel(), s.frames.data() + t * V * 3);
    return s;
  };

  mesh::VertexSequence gt = two_frames();
  mesh::VertexSequence pred = two_frames();
  CHECK(lve(pred, gt, topo) == 0.0);

  // pin the compared coordinates so the offsets are exact in doubles
  int64_t la = topo.lip_vertex_indices[0], lb = topo.lip_vertex_indices[3];
  int64_t lc = topo.lip_vertex_indices[7], ld = topo.lip_vertex_indices[12];
  gt.frames.at(0, la, 0) = 0.0;
  pred.frames.at(0, la, 0) = 0.003;
  gt.frames.at(0, lb, 1) = 0.0;
  pred.frames.at(0, lb, 1) = 0.001;  // dominated by the worst offset
  gt.frames.at(1, lc, 1) = 0.0;
  pred.frames.at(1, lc, 1) = -0.004;
  gt.frames.at(1, ld, 2) = 0.0;
  pred.frames.at(1, ld, 2) = 0.002;
  CHECK(lve(pred, gt, topo) == (0.003 * 0.003 + 0.004 * 0.004) / 2.0);
  CHECK(lve(pred, gt, topo) == doctest::Approx(1.25e-5));

  // huge error on a non-lip vertex stays invisible
  mesh::VertexSequence off = two_frames();
  int64_t non_lip = -1;
  for (int64_t v = 0; v < V; ++v)
    if (!std::binary_search(topo.lip_vertex_indices.begin(), topo.lip_vertex_indices.end(), v)) {
      non_lip = v;
      break;
    }
  REQUIRE(non_lip >= 0);
  off.frames.at(0, non_lip, 0) += 500.0;
  off.frames.at(1, non_lip, 2) -= 300.0;
  CHECK(lve(off, two_frames(), topo) == 0.0);

  mesh::VertexSequence one;
  one.fps = 25.0;
  one.frames = Tensor({1, V, 3});
  CHECK_THROWS_AS(lve(one, gt, topo), ContractError);
}

TEST_CASE("token streams render as text with unknowns") {
  CHECK(tokens_to_text({1, 14, 1}) == "bob");
  CHECK(tokens_to_text({0, 26, 28, 29, 31, 1}) == std::string("a ???b"));
  CHECK(tokens_to_text({}) == "");
}

TEST_CASE("pca projection recovers low-rank geometry") {
  const int64_t d = 5;
  std::vector<double> dir = {3.0, -1.0, 2.0, 0.0, 0.5};
  std::vector<double> base = {10.0, -5.0, 2.0, 0.0, 1.0};
  std::vector<double> c = {0.0, 1.0, -2.0, 0.5, 3.0, -1.5};
  const int64_t n = static_cast<int64_t>(c.size());
  double norm = 0.0;
  for (double v : dir) norm += v * v;
  norm = std::sqrt(norm);
  double mean_c = 0.0;
  for (double v : c) mean_c += v;
  mean_c /= static_cast<double>(n);

  Tensor rows({n, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) rows.at(i, j) = base[j] + c[i] * dir[j];

  Tensor proj = pca_project(rows, 2);
  REQUIRE(proj.shape() == std::vector<int64_t>({n, 2}));
  for (int64_t i = 0; i < n; ++i) {
    // collinear input: first component is the signed position along the line,
    // sign pinned by the largest loading (dir[0] > 0)
    CHECK(proj.at(i, 0) == doctest::Approx((c[i] - mean_c) * norm).epsilon(1e-9));
    CHECK(std::abs(proj.at(i, 1)) < 1e-9);
  }

  // rank-2 data: the 2-D projection preserves pairwise distances
  Rng rng(404);
  const int64_t n2 = 7, d2 = 6;
  std::vector<double> u1(d2), u2(d2);
  for (auto& v : u1) v = rng.normal();
  for (auto& v : u2) v = rng.normal();
  Tensor flat({n2, d2});
  std::vector<double> a(n2), b(n2);
  for (int64_t i = 0; i < n2; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    for (int64_t j = 0; j < d2; ++j) flat.at(i, j) = 4.0 + a[i] * u1[j] + b[i] * u2[j];
  }
  Tensor p2 = pca_project(flat, 2);
  for (int64_t i = 0; i < n2; ++i)
    for (int64_t j = i + 1; j < n2; ++j) {
      double orig = 0.0;
      for (int64_t k = 0; k < d2; ++k) {
        double dd = flat.at(i, k) - flat.at(j, k);
        orig += dd * dd;
      }
      double got = 0.0;
      for (int64_t k = 0; k < 2; ++k) {
        double dd = p2.at(i, k) - p2.at(j, k);
        got += dd * dd;
      }
      CHECK(got == doctest::Approx(orig).epsilon(1e-9));
    }

  // deterministic to the byte
  Tensor again = pca_project(flat, 2);
  REQUIRE(again.numel() == p2.numel());
  CHECK(std::memcmp(again.data(), p2.data(), sizeof(double) * size_t(p2.numel())) == 0);

  CHECK_THROWS_AS(pca_project(Tensor({0, 3}), 2), ContractError);
  CHECK_THROWS_AS(pca_project(rows, 6), ContractError);
  CHECK_THROWS_AS(pca_project(rows, 0), ContractError);
}

TEST_CASE("report serialization is deterministic and escaped") {
  SplitReport rep;
  rep.split = "test-seen";
  rep.judge = "stage1";
  rep.decode = "attention";
  SampleScore a;
  a.id = "s0_000";
  a.lve = 2.0;
  a.char_edits = 3;
  a.char_len = 6;
  a.viseme_edits = 1;
  a.viseme_len = 4;
  a.hyp = "he\"llo\\";
  a.ref = "bob pat";
  SampleScore b;
  b.id = "s0_001";
  b.lve = 4.0;
  b.char_edits = 1;
  b.char_len = 2;
  b.viseme_edits = 1;
  b.viseme_len = 2;
  b.hyp = "mm";
  b.ref = "mo";
  rep.samples = {a, b};
  rep.finalize();
  CHECK(rep.mean_lve == 3.0);
  CHECK(rep.pooled_cer == 4.0 / 8.0);
  CHECK(rep.pooled_ver == 2.0 / 6.0);

  std::string j1 = report_json(rep), j2 = report_json(rep);
  CHECK(j1 == j2);
  CHECK(j1.find("\"pooled_cer\": 0.5") != std::string::npos);
  CHECK(j1.find("he\\\"llo\\\\") != std::string::npos);  // escaped quote and backslash
  CHECK(j1.find("\"num_samples\": 2") != std::string::npos);

  std::string csv = report_csv(rep);
  CHECK(csv.rfind("id,lve,cer,ver,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 rows
  CHECK(csv.find("\"he\"\"llo\\\"") != std::string::npos);

  auto jp = (fs::temp_directory_path() / "avg_report.json").string();
  auto cp = (fs::temp_directory_path() / "avg_report.csv").string();
  write_report(rep, jp, cp);
  write_report(rep, jp, cp);  // overwrite must reproduce the same bytes
  std::ifstream jin(jp, std::ios::binary), cin_(cp, std::ios::binary);
  std::string jf((std::istreambuf_iterator<char>(jin)), std::istreambuf_iterator<char>());
  std::string cf((std::istreambuf_iterator<char>(cin_)), std::istreambuf_iterator<char>());
  CHECK(jf == j1);
  CHECK(cf == csv);
  fs::remove(jp);
  fs::remove(cp);

  SplitReport empty;
  CHECK_THROWS_AS(empty.finalize(), ContractError);
}

TEST_CASE("eval options come from the config") {
  cfg::Config c = cfg::default_config();
  EvalOptions o = eval_options(c);
  CHECK(o.decode == "attention");
  CHECK(o.judge_tag == "stage1");
  CHECK(o.crop_size == 88);
  CHECK(o.cam.width == 128);
  CHECK(o.sigma == doctest::Approx(1e-4));
  CHECK(o.visual_only == false);

  c.set("eval.decode", "ctc");
  c.set("trainer.visual_only", "true");
  o = eval_options(c);
  CHECK(o.decode == "ctc");
  CHECK(o.visual_only == true);

  c.set("eval.decode", "beam");
  CHECK_THROWS_AS(eval_options(c), ConfigError);
}

TEST_CASE("ground-truth prediction scores zero vertex error") {
  const data::Manifest& m = fixture_manifest();
  EvalFixture fx(m.num_subjects);
  data::SampleRef ref = m.split("test-seen").at(0);
  data::LoadedSample s = data::load_sample(m, ref);
  Tensor feats = aligned_features(s, m.fps, *fx.enc);

  SampleScore row =
      score_sample(ref.id, s.vertices, s.vertices, s.transcript, feats, fx.judge, fx.topo, fx.opt);
  CHECK(row.lve == 0.0);
  CHECK(row.ref == s.transcript);
  CHECK(row.char_len == int64_t(s.transcript.size()));

  // the transcript row is exactly the judge's own reading of the GT renders
  render::FrameSequence fr = render::render_frames(s.vertices, fx.topo, fx.opt.cam, fx.opt.sigma);
  render::LipFrames lips = render::crop_lips(fr, s.vertices, fx.topo, fx.opt.cam, fx.opt.margin,
                                             fx.opt.crop_size, fx.opt.crop_size);
  std::string expect = tokens_to_text(fx.judge.decode_greedy(lips.crops, feats, false));
  CHECK(row.hyp == expect);
  CHECK(row.char_edits == edit_distance(row.hyp, row.ref));

  // ctc decode mode runs the other head and stays deterministic
  EvalOptions ctc_opt = fx.opt;
  ctc_opt.decode = "ctc";
  SampleScore c1 =
      score_sample(ref.id, s.vertices, s.vertices, s.transcript, feats, fx.judge, fx.topo, ctc_opt);
  SampleScore c2 =
      score_sample(ref.id, s.vertices, s.vertices, s.transcript, feats, fx.judge, fx.topo, ctc_opt);
  CHECK(c1.hyp == c2.hyp);
  CHECK(c1.lve == 0.0);

  EvalOptions bad = fx.opt;
  bad.decode = "beam";
  CHECK_THROWS_AS(
      score_sample(ref.id, s.vertices, s.vertices, s.transcript, feats, fx.judge, fx.topo, bad),
      ConfigError);
}

TEST_CASE("split evaluation covers every sample deterministically") {
  const data::Manifest& m = fixture_manifest();
  EvalFixture fx(m.num_subjects);

  SplitReport rep =
      evaluate_split(fx.model, fx.judge, *fx.enc, fx.topo, fx.tmpl, m, "test-seen", fx.opt);
  std::vector<data::SampleRef> refs = m.split("test-seen");
  REQUIRE(rep.samples.size() == refs.size());
  for (size_t i = 0; i < refs.size(); ++i) CHECK(rep.samples[i].id == refs[i].id);
  CHECK(rep.split == "test-seen");
  CHECK(rep.judge == "stage1");

  // aggregates recompute exactly from the rows
  double lsum = 0.0;
  int64_t ce = 0, cl = 0, ve = 0, vl = 0;
  for (const auto& r : rep.samples) {
    lsum += r.lve;
    ce += r.char_edits;
    cl += r.char_len;
    ve += r.viseme_edits;
    vl += r.viseme_len;
  }
  CHECK(rep.mean_lve == lsum / double(rep.samples.size()));
  CHECK(rep.pooled_cer == double(ce) / double(cl));
  CHECK(rep.pooled_ver == double(ve) / double(vl));

  // the untrained animator reproduces the template, so GT motion shows up as error
  CHECK(rep.mean_lve > 0.0);

  SplitReport again =
      evaluate_split(fx.model, fx.judge, *fx.enc, fx.topo, fx.tmpl, m, "test-seen", fx.opt);
  CHECK(report_json(again) == report_json(rep));

  CHECK_THROWS_AS(evaluate_split(fx.model, fx.judge, *fx.enc, fx.topo, fx.tmpl, m, "nope", fx.opt),
                  ValidationError);
}

TEST_CASE("metrics fixture cleanup") {
  fs::remove_all(fixture_manifest().root);
  CHECK(true);
}
