#include "avg/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace avg::mesh {

void MeshTopology::validate() const {
  AVG_CHECK(vertex_count > 0, ValidationError, "topology: vertex_count must be positive");
  for (size_t f = 0; f < faces.size(); ++f) {
    const auto& [a, b, c] = faces[f];
    for (int64_t i : {a, b, c})
      AVG_CHECK(0 <= i && i < vertex_count, ValidationError,
                "topology: face " + std::to_string(f) + " index " + std::to_string(i) +
                    " out of range [0," + std::to_string(vertex_count) + ")");
    AVG_CHECK(a != b && b != c && a != c, ValidationError,
              "topology: face " + std::to_string(f) + " is degenerate");
  }
  AVG_CHECK(!lip_vertex_indices.empty(), ValidationError, "topology: empty lip vertex set");
  for (size_t i = 0; i < lip_vertex_indices.size(); ++i) {
    AVG_CHECK(0 <= lip_vertex_indices[i] && lip_vertex_indices[i] < vertex_count,
              ValidationError, "topology: lip index out of range");
    if (i > 0)
      AVG_CHECK(lip_vertex_indices[i - 1] < lip_vertex_indices[i], ValidationError,
                "topology: lip indices must be strictly increasing");
  }
  std::set<int64_t> lips(lip_vertex_indices.begin(), lip_vertex_indices.end());
  for (const auto& [u, l] : lip_key_pairs) {
    AVG_CHECK(lips.count(u) && lips.count(l), ValidationError,
              "topology: lip key pair (" + std::to_string(u) + "," + std::to_string(l) +
                  ") not contained in lip vertex set");
  }
}

void VertexSequence::validate() const {
  AVG_CHECK(frames.ndim() == 3 && frames.dim(2) == 3, ContractError,
            "vertex sequence must be [T,V,3], got " + frames.shape_str());
  AVG_CHECK(frames.dim(0) >= 1, ValidationError, "vertex sequence needs at least one frame");
  AVG_CHECK(fps > 0.0, ValidationError, "vertex sequence fps must be positive");
  AVG_CHECK(frames.all_finite(), ValidationError, "vertex sequence has non-finite coordinates");
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& what) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

MeshTopology load_topology(const std::string& path) {
  std::ifstream in(path);
  AVG_CHECK(in.good(), IoError, "cannot open topology file: " + path);
  MeshTopology topo;
  std::string line, section;
  int lineno = 0;
  int64_t declared_vertices = -1;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;
    if (tok == "VERTICES" || tok == "FACES" || tok == "LIP" || tok == "LIP_PAIRS") {
      section = tok;
      if (section == "VERTICES") {
        if (!(ss >> declared_vertices) || declared_vertices <= 0)
          parse_fail(path, lineno, "VERTICES needs a positive count");
        topo.vertex_count = declared_vertices;
      }
      continue;
    }
    std::istringstream row(line);
    if (section == "FACES") {
      int64_t a, b, c;
      if (!(row >> a >> b >> c)) parse_fail(path, lineno, "face row needs three indices");
      topo.faces.push_back({a, b, c});
    } else if (section == "LIP") {
      int64_t v;
      while (row >> v) topo.lip_vertex_indices.push_back(v);
      if (row.fail() && !row.eof()) parse_fail(path, lineno, "lip row needs integer indices");
    } else if (section == "LIP_PAIRS") {
      int64_t u, l;
      if (!(row >> u >> l)) parse_fail(path, lineno, "lip pair row needs two indices");
      topo.lip_key_pairs.emplace_back(u, l);
    } else {
      parse_fail(path, lineno, "content before a section header");
    }
  }
  if (declared_vertices < 0) parse_fail(path, lineno, "missing VERTICES section");
  topo.validate();
  return topo;
}

void save_topology(const MeshTopology& topo, const std::string& path) {
  std::ofstream out(path);
  AVG_CHECK(out.good(), IoError, "cannot write topology file: " + path);
  out << "VERTICES " << topo.vertex_count << "\n";
  out << "FACES\n";
  for (const auto& [a, b, c] : topo.faces) out << a << " " << b << " " << c << "\n";
  out << "LIP\n";
  for (int64_t v : topo.lip_vertex_indices) out << v << "\n";
  out << "LIP_PAIRS\n";
  for (const auto& [u, l] : topo.lip_key_pairs) out << u << " " << l << "\n";
  AVG_CHECK(out.good(), IoError, "failed writing topology file: " + path);
}

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  AVG_CHECK(in.gcount() == sizeof(T), ParseError,
            path + ": corrupt header, truncated " + std::string(what));
  return v;
}

}  // namespace

VertexSequence read_vseq(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  AVG_CHECK(in.good(), IoError, "cannot open vertex sequence: " + path);
  char magic[5];
  in.read(magic, 5);
  AVG_CHECK(in.gcount() == 5 && std::memcmp(magic, "VSEQ1", 5) == 0, ParseError,
            path + ": not a VSEQ1 file");
  auto T = get<uint32_t>(in, path, "frame count");
  auto V = get<uint32_t>(in, path, "vertex count");
  auto fps = get<float>(in, path, "fps");
  AVG_CHECK(T >= 1 && V >= 1 && fps > 0.0f, ParseError, path + ": invalid VSEQ1 header");
  VertexSequence seq;
  seq.fps = static_cast<double>(fps);
  seq.frames = Tensor({static_cast<int64_t>(T), static_cast<int64_t>(V), 3});
  std::vector<float> buf(static_cast<size_t>(T) * V * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  AVG_CHECK(in.gcount() == static_cast<std::streamsize>(buf.size() * 4), ParseError,
            path + ": corrupt payload, expected " + std::to_string(buf.size() * 4) + " bytes");
  for (size_t i = 0; i < buf.size(); ++i) seq.frames[static_cast<int64_t>(i)] = buf[i];
  seq.validate();
  return seq;
}

void write_vseq(const VertexSequence& seq, const std::string& path) {
  seq.validate();
  std::ofstream out(path, std::ios::binary);
  AVG_CHECK(out.good(), IoError, "cannot write vertex sequence: " + path);
  out.write("VSEQ1", 5);
  put<uint32_t>(out, static_cast<uint32_t>(seq.num_frames()));
  put<uint32_t>(out, static_cast<uint32_t>(seq.num_vertices()));
  put<float>(out, static_cast<float>(seq.fps));
  std::vector<float> buf(static_cast<size_t>(seq.frames.numel()));
  for (size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(seq.frames[static_cast<int64_t>(i)]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
  AVG_CHECK(out.good(), IoError, "failed writing vertex sequence: " + path);
}

void write_fseq(const Tensor& features, double rate, const std::string& path) {
  AVG_CHECK(features.ndim() == 2, ContractError, "write_fseq expects [T,D]");
  std::ofstream out(path, std::ios::binary);
  AVG_CHECK(out.good(), IoError, "cannot write feature sequence: " + path);
  out.write("FSEQ1", 5);
  put<uint32_t>(out, static_cast<uint32_t>(features.dim(0)));
  put<uint32_t>(out, static_cast<uint32_t>(features.dim(1)));
  put<float>(out, static_cast<float>(rate));
  std::vector<float> buf(static_cast<size_t>(features.numel()));
  for (size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(features[static_cast<int64_t>(i)]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
  AVG_CHECK(out.good(), IoError, "failed writing feature sequence: " + path);
}

Tensor read_fseq(const std::string& path, double* rate_out) {
  std::ifstream in(path, std::ios::binary);
  AVG_CHECK(in.good(), IoError, "cannot open feature sequence: " + path);
  char magic[5];
  in.read(magic, 5);
  AVG_CHECK(in.gcount() == 5 && std::memcmp(magic, "FSEQ1", 5) == 0, ParseError,
            path + ": not an FSEQ1 file");
  auto T = get<uint32_t>(in, path, "frame count");
  auto D = get<uint32_t>(in, path, "feature dim");
  auto rate = get<float>(in, path, "rate");
  Tensor f({static_cast<int64_t>(T), static_cast<int64_t>(D)});
  std::vector<float> buf(static_cast<size_t>(T) * D);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  AVG_CHECK(in.gcount() == static_cast<std::streamsize>(buf.size() * 4), ParseError,
            path + ": corrupt payload");
  for (size_t i = 0; i < buf.size(); ++i) f[static_cast<int64_t>(i)] = buf[i];
  if (rate_out) *rate_out = static_cast<double>(rate);
  return f;
}

VertexSequence lip_subset(const VertexSequence& seq, const MeshTopology& topo) {
  AVG_CHECK(seq.num_vertices() == topo.vertex_count, ContractError,
            "lip_subset: sequence has " + std::to_string(seq.num_vertices()) +
                " vertices, topology expects " + std::to_string(topo.vertex_count));
  int64_t T = seq.num_frames(), VL = topo.lip_count();
  VertexSequence out;
  out.fps = seq.fps;
  out.frames = Tensor({T, VL, 3});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t k = 0; k < VL; ++k) {
      int64_t v = topo.lip_vertex_indices[static_cast<size_t>(k)];
      for (int64_t c = 0; c < 3; ++c) out.frames.at(t, k, c) = seq.frames.at(t, v, c);
    }
  return out;
}

std::vector<double> lip_aperture(const VertexSequence& seq, const MeshTopology& topo) {
  AVG_CHECK(!topo.lip_key_pairs.empty(), ContractError, "lip_aperture: no lip key pairs");
  AVG_CHECK(seq.num_vertices() == topo.vertex_count, ContractError,
            "lip_aperture: vertex count mismatch");
  std::vector<double> out(static_cast<size_t>(seq.num_frames()));
  for (int64_t t = 0; t < seq.num_frames(); ++t) {
    double acc = 0.0;
    for (const auto& [u, l] : topo.lip_key_pairs) {
      double d2 = 0.0;
      for (int64_t c = 0; c < 3; ++c) {
        double d = seq.frames.at(t, u, c) - seq.frames.at(t, l, c);
        d2 += d * d;
      }
      acc += std::sqrt(d2);
    }
    out[static_cast<size_t>(t)] = acc / static_cast<double>(topo.lip_key_pairs.size());
  }
  return out;
}

}  // namespace avg::mesh
