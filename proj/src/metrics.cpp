#include "avg/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace avg::metrics {

namespace {

// Rolling two-row Levenshtein; unit costs.
template <typename Seq>
int64_t levenshtein(const Seq& a, const Seq& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), int64_t{0});
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::vector<std::string> text_visemes(const std::string& text, const lang::Lexicon& lexicon,
                                      const lang::VisemeMap& map) {
  return lang::to_visemes(lang::g2p(text, lexicon), map);
}

// Shortest round-trip decimal form; bytes are stable across runs.
std::string fmt_num(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  AVG_CHECK(res.ec == std::errc(), NumericError, "number formatting failed");
  return std::string(buf, res.ptr);
}

std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(c);
        }
    }
  }
  return out;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    out.push_back(c);
    if (c == '"') out.push_back('"');
  }
  out.push_back('"');
  return out;
}

}  // namespace

int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  return levenshtein(a, b);
}

int64_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return levenshtein(a, b);
}

int64_t edit_distance(const std::string& a, const std::string& b) { return levenshtein(a, b); }

double cer(const std::string& hyp, const std::string& ref) {
  AVG_CHECK(!ref.empty(), ContractError, "cer: reference must be nonempty");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

double ver(const std::string& hyp, const std::string& ref, const lang::Lexicon& lexicon,
           const lang::VisemeMap& map) {
  std::vector<std::string> rv = text_visemes(ref, lexicon, map);
  AVG_CHECK(!rv.empty(), ContractError, "ver: reference converts to no visemes");
  std::vector<std::string> hv = text_visemes(hyp, lexicon, map);
  return static_cast<double>(edit_distance(hv, rv)) / static_cast<double>(rv.size());
}

double lve(const mesh::VertexSequence& pred, const mesh::VertexSequence& gt,
           const mesh::MeshTopology& topo) {
  AVG_CHECK(pred.frames.shape() == gt.frames.shape(), ContractError,
            "lve: prediction " + pred.frames.shape_str() + " vs ground truth " +
                gt.frames.shape_str());
  AVG_CHECK(pred.num_vertices() == topo.vertex_count, ContractError,
            "lve: sequence does not match the topology");
  AVG_CHECK(!topo.lip_vertex_indices.empty(), ContractError, "lve: topology lists no lip vertices");
  const int64_t T = pred.num_frames();
  AVG_CHECK(T >= 1, ContractError, "lve: empty sequence");
  double acc = 0.0;
  for (int64_t t = 0; t < T; ++t) {
    double worst = 0.0;
    for (int64_t v : topo.lip_vertex_indices) {
      double sq = 0.0;
      for (int64_t c = 0; c < 3; ++c) {
        double d = pred.frames.at(t, v, c) - gt.frames.at(t, v, c);
        sq += d * d;
      }
      worst = std::max(worst, sq);
    }
    acc += worst;
  }
  return acc / static_cast<double>(T);
}

std::string tokens_to_text(const std::vector<int64_t>& ids) {
  std::vector<int> safe;
  safe.reserve(ids.size());
  for (int64_t id : ids)
    safe.push_back(0 <= id && id < lang::kAlphabetSize ? static_cast<int>(id) : lang::kUnkId);
  return lang::decode_tokens(safe);
}

Tensor pca_project(const Tensor& rows, int64_t dims) {
  AVG_CHECK(rows.ndim() == 2, ContractError, "pca_project expects [N,D] rows");
  const int64_t n = rows.dim(0), d = rows.dim(1);
  AVG_CHECK(n >= 1, ContractError, "pca_project: no rows");
  AVG_CHECK(1 <= dims && dims <= d, ContractError, "pca_project: dims out of range");
  Eigen::MatrixXd x(n, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) x(i, j) = rows.at(i, j);
  x.rowwise() -= Eigen::RowVectorXd(x.colwise().mean());
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  AVG_CHECK(es.info() == Eigen::Success, NumericError, "pca_project: eigensolver failed");
  Tensor out({n, dims});
  for (int64_t k = 0; k < dims; ++k) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - k);  // eigenvalues ascend
    int64_t arg = 0;
    for (int64_t j = 1; j < d; ++j)
      if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
    if (v(arg) < 0.0) v = -v;
    Eigen::VectorXd proj = x * v;
    for (int64_t i = 0; i < n; ++i) out.at(i, k) = proj(i);
  }
  return out;
}

EvalOptions eval_options(const cfg::Config& c) {
  EvalOptions o;
  o.cam = render::make_camera(c);
  o.sigma = c.get_num("render.sigma");
  o.margin = c.get_num("render.margin");
  o.crop_size = c.get_int("render.crop_size");
  o.decode = c.get_str("eval.decode");
  AVG_CHECK(o.decode == "attention" || o.decode == "ctc", ConfigError,
            "eval.decode must be attention or ctc, got '" + o.decode + "'");
  o.judge_tag = c.get_str("eval.judge");
  AVG_CHECK(o.judge_tag == "stage1" || o.judge_tag == "finetuned", ConfigError,
            "eval.judge must be stage1 or finetuned, got '" + o.judge_tag + "'");
  o.visual_only = c.get_bool("trainer.visual_only");
  return o;
}

void SplitReport::finalize() {
  AVG_CHECK(!samples.empty(), ContractError, "report has no rows");
  double lve_sum = 0.0;
  int64_t ce = 0, cl = 0, ve = 0, vl = 0;
  for (const auto& s : samples) {
    lve_sum += s.lve;
    ce += s.char_edits;
    cl += s.char_len;
    ve += s.viseme_edits;
    vl += s.viseme_len;
  }
  AVG_CHECK(cl > 0 && vl > 0, ContractError, "report reference lengths are zero");
  mean_lve = lve_sum / static_cast<double>(samples.size());
  pooled_cer = static_cast<double>(ce) / static_cast<double>(cl);
  pooled_ver = static_cast<double>(ve) / static_cast<double>(vl);
}

SampleScore score_sample(const std::string& id, const mesh::VertexSequence& pred,
                         const mesh::VertexSequence& gt, const std::string& transcript,
                         const Tensor& features, const expert::Expert& judge,
                         const mesh::MeshTopology& topo, const EvalOptions& opt) {
  AVG_CHECK(!transcript.empty(), ContractError, "score_sample: empty reference transcript");
  const int64_t T = pred.num_frames();
  AVG_CHECK(features.ndim() == 2 && features.dim(0) == T, ContractError,
            "score_sample: features must carry one row per frame");

  SampleScore row;
  row.id = id;
  row.ref = transcript;
  row.lve = lve(pred, gt, topo);

  render::FrameSequence fr = render::render_frames(pred, topo, opt.cam, opt.sigma);
  render::LipFrames lips =
      render::crop_lips(fr, pred, topo, opt.cam, opt.margin, opt.crop_size, opt.crop_size);

  std::vector<int64_t> ids;
  if (opt.decode == "attention") {
    ids = judge.decode_greedy(lips.crops, features, opt.visual_only);
  } else if (opt.decode == "ctc") {
    ag::NoGradGuard guard;
    Rng drop(0);
    expert::ExpertOutput out =
        judge.forward(ag::Var::constant(lips.crops), features, {}, opt.visual_only, drop);
    ids = expert::ctc_greedy(out.ctc_logits.value(), lang::kCtcBlank);
  } else {
    throw ConfigError("score_sample: unknown decode mode '" + opt.decode + "'");
  }
  row.hyp = tokens_to_text(ids);

  row.char_edits = edit_distance(row.hyp, row.ref);
  row.char_len = static_cast<int64_t>(row.ref.size());

  const auto& lex = lang::builtin_lexicon();
  const auto& vmap = lang::builtin_viseme_map();
  std::vector<std::string> rv = text_visemes(row.ref, lex, vmap);
  AVG_CHECK(!rv.empty(), ContractError, "score_sample: reference converts to no visemes");
  std::vector<std::string> hv = text_visemes(row.hyp, lex, vmap);
  row.viseme_edits = edit_distance(hv, rv);
  row.viseme_len = static_cast<int64_t>(rv.size());
  return row;
}

SplitReport evaluate_split(const anim::Animator& model, const expert::Expert& judge,
                           audio::SpeechEncoder& enc, const mesh::MeshTopology& topo,
                           const Tensor& tmpl, const data::Manifest& m, const std::string& split,
                           const EvalOptions& opt) {
  AVG_CHECK(tmpl.ndim() == 2 && tmpl.dim(0) == topo.vertex_count && tmpl.dim(1) == 3,
            ContractError, "evaluate_split: template does not match the topology");
  std::vector<data::SampleRef> refs = m.split(split);
  AVG_CHECK(!refs.empty(), ValidationError, "evaluate_split: split '" + split + "' has no samples");

  SplitReport rep;
  rep.split = split;
  rep.judge = opt.judge_tag;
  rep.decode = opt.decode;
  ag::NoGradGuard guard;
  for (const auto& r : refs) {
    data::LoadedSample s = data::load_sample(m, r);
    const int64_t T = s.vertices.num_frames();
    audio::AudioFeatures f = audio::extract_features(s.wav, enc);
    Tensor feats = expert::fit_rows(audio::resample_features(f, m.fps).features, T);
    Tensor predicted = model.predict(feats, T, tmpl, s.style.subject_id);
    mesh::VertexSequence pseq{predicted, m.fps};
    rep.samples.push_back(
        score_sample(r.id, pseq, s.vertices, s.transcript, feats, judge, topo, opt));
  }
  rep.finalize();
  return rep;
}

std::string report_json(const SplitReport& r) {
  std::ostringstream out;
  out << "{\n";
  out << "  \"split\": \"" << json_escape(r.split) << "\",\n";
  out << "  \"judge\": \"" << json_escape(r.judge) << "\",\n";
  out << "  \"decode\": \"" << json_escape(r.decode) << "\",\n";
  out << "  \"num_samples\": " << r.samples.size() << ",\n";
  out << "  \"mean_lve\": " << fmt_num(r.mean_lve) << ",\n";
  out << "  \"pooled_cer\": " << fmt_num(r.pooled_cer) << ",\n";
  out << "  \"pooled_ver\": " << fmt_num(r.pooled_ver) << ",\n";
  out << "  \"samples\": [\n";
  for (size_t i = 0; i < r.samples.size(); ++i) {
    const SampleScore& s = r.samples[i];
    out << "    {\"id\": \"" << json_escape(s.id) << "\", \"lve\": " << fmt_num(s.lve)
        << ", \"cer\": " << fmt_num(s.sample_cer()) << ", \"ver\": " << fmt_num(s.sample_ver())
        << ", \"char_edits\": " << s.char_edits << ", \"char_len\": " << s.char_len
        << ", \"viseme_edits\": " << s.viseme_edits << ", \"viseme_len\": " << s.viseme_len
        << ", \"hyp\": \"" << json_escape(s.hyp) << "\", \"ref\": \"" << json_escape(s.ref)
        << "\"}" << (i + 1 < r.samples.size() ? "," : "") << "\n";
  }
  out << "  ]\n}\n";
  return out.str();
}

std::string report_csv(const SplitReport& r) {
  std::ostringstream out;
  out << "id,lve,cer,ver,char_edits,char_len,viseme_edits,viseme_len,hyp,ref\n";
  for (const SampleScore& s : r.samples) {
    out << csv_quote(s.id) << "," << fmt_num(s.lve) << "," << fmt_num(s.sample_cer()) << ","
        << fmt_num(s.sample_ver()) << "," << s.char_edits << "," << s.char_len << ","
        << s.viseme_edits << "," << s.viseme_len << "," << csv_quote(s.hyp) << ","
        << csv_quote(s.ref) << "\n";
  }
  return out.str();
}

void write_report(const SplitReport& r, const std::string& json_path,
                  const std::string& csv_path) {
  {
    std::ofstream out(json_path, std::ios::binary);
    AVG_CHECK(out.good(), IoError, "cannot write " + json_path);
    out << report_json(r);
    AVG_CHECK(out.good(), IoError, "failed writing " + json_path);
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::binary);
    AVG_CHECK(out.good(), IoError, "cannot write " + csv_path);
    out << report_csv(r);
    AVG_CHECK(out.good(), IoError, "failed writing " + csv_path);
  }
}

}  // namespace avg::metrics
