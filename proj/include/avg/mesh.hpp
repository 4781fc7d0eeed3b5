#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "avg/error.hpp"
#include "avg/tensor.hpp"

namespace avg::mesh {

// Triangle-soup face topology with lip-region bookkeeping. Immutable after
// validation; indices are 0-based, coordinates are millimeters throughout.
struct MeshTopology {
  int64_t vertex_count = 0;
  std::vector<std::array<int64_t, 3>> faces;
  std::vector<int64_t> lip_vertex_indices;              // strictly increasing
  std::vector<std::pair<int64_t, int64_t>> lip_key_pairs;  // (upper, lower)

  int64_t lip_count() const { return static_cast<int64_t>(lip_vertex_indices.size()); }
  void validate() const;
};

// T x V x 3 vertex positions in millimeters plus the capture rate.
struct VertexSequence {
  Tensor frames;  // [T, V, 3]
  double fps = 0.0;

  int64_t num_frames() const { return frames.dim(0); }
  int64_t num_vertices() const { return frames.dim(1); }
  void validate() const;
};

// One-hot speaking-style conditioning over training subjects.
struct StyleLabel {
  int64_t subject_id = 0;
  int64_t num_subjects = 0;

  Tensor one_hot() const {
    AVG_CHECK(0 <= subject_id && subject_id < num_subjects, ContractError,
              "style subject_id out of range");
    Tensor t({num_subjects});
    t[subject_id] = 1.0;
    return t;
  }
};

MeshTopology load_topology(const std::string& path);
void save_topology(const MeshTopology& topo, const std::string& path);

// Binary vertex-sequence container: magic "VSEQ1", u32 T, u32 V, f32 fps,
// then T*V*3 little-endian f32 values, frame-major.
VertexSequence read_vseq(const std::string& path);
void write_vseq(const VertexSequence& seq, const std::string& path);

// Feature-sequence variant of the same container ("FSEQ1", u32 T, u32 D,
// f32 rate, T*D f32 values).
void write_fseq(const Tensor& features, double rate, const std::string& path);
Tensor read_fseq(const std::string& path, double* rate_out = nullptr);

// Rows of `seq` restricted to the lip subset, order preserved.
VertexSequence lip_subset(const VertexSequence& seq, const MeshTopology& topo);

// Mean distance between the lip key pairs per frame (mm).
std::vector<double> lip_aperture(const VertexSequence& seq, const MeshTopology& topo);

}  // namespace avg::mesh
