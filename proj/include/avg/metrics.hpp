#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avg/animator.hpp"
#include "avg/audio.hpp"
#include "avg/config.hpp"
#include "avg/data.hpp"
#include "avg/expert.hpp"
#include "avg/lang.hpp"
#include "avg/mesh.hpp"
#include "avg/render.hpp"
#include "avg/tensor.hpp"

namespace avg::metrics {

// Levenshtein distance with unit insertion/deletion/substitution costs.
int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);
int64_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);
int64_t edit_distance(const std::string& a, const std::string& b);

// Character error rate: edit distance over the reference length, spaces
// counted. The reference must be nonempty.
double cer(const std::string& hyp, const std::string& ref);

// Viseme error rate: both texts pass through word-level phoneme conversion
// and the per-phoneme viseme table before the edit distance. The converted
// reference must be nonempty; a hypothesis may collapse to nothing.
double ver(const std::string& hyp, const std::string& ref, const lang::Lexicon& lexicon,
           const lang::VisemeMap& map);

// Worst squared lip-vertex deviation within each frame (mm^2), averaged over
// frames. Non-lip vertices never contribute.
double lve(const mesh::VertexSequence& pred, const mesh::VertexSequence& gt,
           const mesh::MeshTopology& topo);

// Token ids straight from a decoder, rendered as text; ids outside the
// character alphabet print as the unknown glyph instead of raising.
std::string tokens_to_text(const std::vector<int64_t>& ids);

// Rows centered and projected onto the top principal directions of their
// covariance. Component signs are pinned (largest-magnitude loading made
// positive) so the output is deterministic. rows [N,D] -> [N,dims].
Tensor pca_project(const Tensor& rows, int64_t dims = 2);

// ---------------------------------------------------------------------------
// split evaluation

struct EvalOptions {
  render::Camera cam;
  double sigma = 1e-4;
  double margin = 0.3;
  int64_t crop_size = 88;
  std::string decode = "attention";  // attention | ctc
  std::string judge_tag = "stage1";  // recorded in reports
  bool visual_only = false;          // expert mode the judge was trained in
};
EvalOptions eval_options(const cfg::Config& c);

struct SampleScore {
  std::string id;
  double lve = 0.0;
  int64_t char_edits = 0, char_len = 0;
  int64_t viseme_edits = 0, viseme_len = 0;
  std::string hyp, ref;

  double sample_cer() const { return static_cast<double>(char_edits) / char_len; }
  double sample_ver() const { return static_cast<double>(viseme_edits) / viseme_len; }
};

struct SplitReport {
  std::string split;
  std::string judge;
  std::string decode;
  std::vector<SampleScore> samples;
  double mean_lve = 0.0;
  double pooled_cer = 0.0;  // total edits / total reference length
  double pooled_ver = 0.0;

  void finalize();  // recomputes the aggregates from the rows
};

// LVE against ground truth plus transcript scoring: the prediction is
// rendered, lip-cropped, and read by the judge expert; CER/VER compare that
// reading to the reference transcript.
SampleScore score_sample(const std::string& id, const mesh::VertexSequence& pred,
                         const mesh::VertexSequence& gt, const std::string& transcript,
                         const Tensor& features, const expert::Expert& judge,
                         const mesh::MeshTopology& topo, const EvalOptions& opt);

// Rollout evaluation of every sample in a split: speech features from the
// encoder drive the animator, score_sample grades the result. Deterministic;
// an empty split is an error.
SplitReport evaluate_split(const anim::Animator& model, const expert::Expert& judge,
                           audio::SpeechEncoder& enc, const mesh::MeshTopology& topo,
                           const Tensor& tmpl, const data::Manifest& m, const std::string& split,
                           const EvalOptions& opt);

// Deterministic serializations: same report, same bytes.
std::string report_json(const SplitReport& r);
std::string report_csv(const SplitReport& r);
void write_report(const SplitReport& r, const std::string& json_path,
                  const std::string& csv_path = "");

}  // namespace avg::metrics
