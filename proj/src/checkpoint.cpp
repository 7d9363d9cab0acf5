#include "realm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "realm/error.hpp"

namespace realm::ckpt {

namespace {

constexpr char kMagic[4] = {'R', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void name(const std::string& s) {
    if (s.size() > 0xFFFF) throw Error(ErrorCode::InvalidArgument, "name too long: " + s.substr(0, 32));
    le<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw Error(ErrorCode::TruncatedFile, "checkpoint truncated at byte " + std::to_string(pos));
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf[pos + i]) << (8 * i));
    pos += sizeof(T);
    return v;
  }
  std::string name() {
    const auto n = le<std::uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

Tensor scalar(double v) { return Tensor({1}, v); }

}  // namespace

const Tensor* Section::find(const std::string& tensor) const {
  for (const auto& [n, t] : tensors)
    if (n == tensor) return &t;
  return nullptr;
}

Section& Checkpoint::add_section(const std::string& name) {
  sections.push_back({name, {}});
  return sections.back();
}

const Section* Checkpoint::find(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name) return &s;
  return nullptr;
}

const Section& Checkpoint::at(const std::string& name) const {
  const Section* s = find(name);
  if (!s) throw Error(ErrorCode::ShapeMismatch, "checkpoint has no section '" + name + "'");
  return *s;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.sections.size()));
  for (const auto& s : ckpt.sections) {
    w.name(s.name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(s.tensors.size()));
    for (const auto& [n, t] : s.tensors) {
      w.name(n);
      w.le<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
      for (int d : t.shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
      for (double v : t.data) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return std::move(w.out);
}

Checkpoint parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "expected RCKP magic");
  Reader r(bytes);
  r.pos = 4;
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion) throw Error(ErrorCode::BadMagic, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const auto nsec = r.le<std::uint32_t>();
  for (std::uint32_t s = 0; s < nsec; ++s) {
    Section& sec = ckpt.add_section(r.name());
    const auto nt = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < nt; ++i) {
      std::string name = r.name();
      const auto nd = r.le<std::uint32_t>();
      Shape shape;
      for (std::uint32_t k = 0; k < nd; ++k) shape.push_back(static_cast<int>(r.le<std::uint32_t>()));
      Tensor t(shape);
      r.need(4 * t.size());
      for (auto& v : t.data) v = std::bit_cast<float>(r.le<std::uint32_t>());
      sec.tensors.emplace_back(std::move(name), std::move(t));
    }
  }
  return ckpt;
}

void write_file(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path);
  const auto bytes = serialize(ckpt);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::IoError, "short write to " + path);
}

Checkpoint read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

void add_vars(Section& section, const model::NamedVars& vars) {
  for (const auto& [n, v] : vars) section.tensors.emplace_back(n, v.value());
}

void load_vars(const Section& section, const model::NamedVars& vars) {
  for (const auto& [n, v] : vars) {
    const Tensor* t = section.find(n);
    if (!t) throw Error(ErrorCode::ShapeMismatch, "section '" + section.name + "' lacks tensor '" + n + "'");
    if (t->shape != v.shape())
      throw Error(ErrorCode::ShapeMismatch, "tensor '" + n + "' has shape " + shape_str(t->shape) + ", expected " +
                                                shape_str(v.shape()));
    const_cast<ad::Var&>(v).mutable_value().data = t->data;
  }
}

void add_geometry(Checkpoint& ckpt, const model::StudentConfig& c) {
  Section& g = ckpt.add_section("geometry");
  g.tensors = {{"d", scalar(c.d)},
               {"grid", scalar(c.grid)},
               {"layers", scalar(c.layers)},
               {"heads", scalar(c.heads)},
               {"mlp_ratio", scalar(c.mlp_ratio)},
               {"lora_rank", scalar(c.lora_rank)},
               {"lora_alpha", scalar(c.lora_alpha)},
               {"lora_dropout", scalar(c.lora_dropout)},
               {"lora_targets", scalar(c.lora_targets)},
               {"in_bins", scalar(c.in_bins)},
               {"patch", scalar(c.patch)},
               {"embed_base", scalar(c.embed_base)},
               {"d_proj", scalar(c.d_proj)},
               {"ln_eps", scalar(c.ln_eps)}};
}

model::StudentConfig read_geometry(const Checkpoint& ckpt) {
  const Section& g = ckpt.at("geometry");
  auto get = [&](const char* n) {
    const Tensor* t = g.find(n);
    if (!t || t->size() != 1) throw Error(ErrorCode::ShapeMismatch, std::string("geometry lacks ") + n);
    return t->data[0];
  };
  model::StudentConfig c;
  c.d = static_cast<int>(get("d"));
  c.grid = static_cast<int>(get("grid"));
  c.layers = static_cast<int>(get("layers"));
  c.heads = static_cast<int>(get("heads"));
  c.mlp_ratio = get("mlp_ratio");
  c.lora_rank = static_cast<int>(get("lora_rank"));
  c.lora_alpha = get("lora_alpha");
  c.lora_dropout = get("lora_dropout");
  c.lora_targets = static_cast<unsigned>(get("lora_targets"));
  c.in_bins = static_cast<int>(get("in_bins"));
  c.patch = static_cast<int>(get("patch"));
  c.embed_base = static_cast<int>(get("embed_base"));
  c.d_proj = static_cast<int>(get("d_proj"));
  c.ln_eps = get("ln_eps");
  // float32 storage rounds these; restore the exact presets when they match.
  c.lora_dropout = static_cast<float>(c.lora_dropout) == static_cast<float>(0.10) ? 0.10 : c.lora_dropout;
  c.ln_eps = static_cast<float>(c.ln_eps) == static_cast<float>(1e-6) ? 1e-6 : c.ln_eps;
  return c;
}

Checkpoint save_student(const model::Student& s, const model::TeacherParams& t) {
  Checkpoint ckpt;
  add_geometry(ckpt, s.config);
  add_vars(ckpt.add_section("embedder"), model::named_embedder(s.embedder));
  add_vars(ckpt.add_section("backbone"), model::named_backbone(*s.backbone));
  add_vars(ckpt.add_section("lora"), model::named_lora(s.lora));
  add_vars(ckpt.add_section("norm"), model::named_norm(s.norm));
  add_vars(ckpt.add_section("mask_token"), {{"mask_token", s.mask_token}});
  add_vars(ckpt.add_section("teacher"), model::named_teacher_extras(t));
  return ckpt;
}

LoadedModel load_student(const Checkpoint& ckpt) {
  const auto cfg = read_geometry(ckpt);
  // Build with a placeholder seed, then overwrite every tensor from the file.
  LoadedModel m{model::make_teacher(cfg, 0), {}};
  load_vars(ckpt.at("backbone"), model::named_backbone(*m.teacher.backbone));
  load_vars(ckpt.at("teacher"), model::named_teacher_extras(m.teacher));
  m.student = model::make_student(m.teacher, 0);
  load_vars(ckpt.at("embedder"), model::named_embedder(m.student.embedder));
  load_vars(ckpt.at("lora"), model::named_lora(m.student.lora));
  load_vars(ckpt.at("norm"), model::named_norm(m.student.norm));
  load_vars(ckpt.at("mask_token"), {{"mask_token", m.student.mask_token}});
  return m;
}

namespace {

model::NamedVars named_seg(const heads::SegHeadParams& h) { return {{"w", h.w}, {"b", h.b}}; }

model::NamedVars named_depth(const heads::DepthHeadParams& h) {
  return {{"spatial_w", h.spatial_w}, {"spatial_b", h.spatial_b}, {"global_w", h.global_w}, {"global_b", h.global_b}};
}

double meta(const Section& s, const std::string& name) {
  const Tensor* t = s.find(name);
  if (!t || t->size() != 1) throw Error(ErrorCode::ShapeMismatch, "head_meta lacks " + name);
  return t->data[0];
}

}  // namespace

Checkpoint save_seg_head(const heads::SegHeadParams& head) {
  Checkpoint c;
  c.add_section("head_meta").tensors = {{"kind", scalar(0)}, {"classes", scalar(head.classes())}};
  add_vars(c.add_section("head"), named_seg(head));
  return c;
}

Checkpoint save_depth_head(const heads::DepthHeadParams& head, const heads::DepthBins& bins) {
  Checkpoint c;
  c.add_section("head_meta").tensors = {
      {"kind", scalar(1)}, {"bins", scalar(bins.count)}, {"d_min", scalar(bins.d_min)}, {"d_max", scalar(bins.d_max)}};
  add_vars(c.add_section("head"), named_depth(head));
  return c;
}

HeadCheckpoint load_head(const Checkpoint& ckpt) {
  const Section& m = ckpt.at("head_meta");
  const Section& h = ckpt.at("head");
  HeadCheckpoint out;
  const Tensor* w = h.find(meta(m, "kind") == 0 ? "w" : "spatial_w");
  if (!w || w->rank() != 2) throw Error(ErrorCode::ShapeMismatch, "head weights missing");
  if (meta(m, "kind") == 0) {
    out.kind = HeadCheckpoint::Kind::Seg;
    out.seg = heads::make_seg_head(w->dim(1), w->dim(0), 0, 0.0);
    load_vars(h, named_seg(out.seg));
  } else {
    out.kind = HeadCheckpoint::Kind::Depth;
    out.bins = {static_cast<int>(meta(m, "bins")), meta(m, "d_min"), meta(m, "d_max")};
    out.depth = heads::make_depth_head(w->dim(1), w->dim(0), 0, 0.0);
    load_vars(h, named_depth(out.depth));
  }
  return out;
}

}  // namespace realm::ckpt
