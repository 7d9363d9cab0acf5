#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "realm/heads.hpp"
#include "realm/model.hpp"
#include "realm/tensor.hpp"

namespace realm::ckpt {

/// Named tensor sections, stored as little-endian float32 with shape headers:
///
///   "RCKP" u32 version u32 section_count
///   per section: u16 name_len, name, u32 tensor_count
///   per tensor:  u16 name_len, name, u32 ndim, u32 dims[ndim], f32 values[]
struct Section {
  std::string name;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& tensor) const;
};

struct Checkpoint {
  std::vector<Section> sections;

  Section& add_section(const std::string& name);
  const Section* find(const std::string& name) const;
  const Section& at(const std::string& name) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint parse(std::span<const std::uint8_t> bytes);
void write_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_file(const std::string& path);

void add_vars(Section& section, const model::NamedVars& vars);
/// Copies section values into existing variables; names and shapes must match.
void load_vars(const Section& section, const model::NamedVars& vars);

/// Sections: geometry, embedder, backbone (frozen), lora, norm, mask_token, teacher.
Checkpoint save_student(const model::Student& student, const model::TeacherParams& teacher);

struct LoadedModel {
  model::TeacherParams teacher;
  model::Student student;
};
LoadedModel load_student(const Checkpoint& ckpt);

void add_geometry(Checkpoint& ckpt, const model::StudentConfig& config);
model::StudentConfig read_geometry(const Checkpoint& ckpt);

struct HeadCheckpoint {
  enum class Kind { Seg, Depth };
  Kind kind = Kind::Seg;
  heads::SegHeadParams seg;
  heads::DepthHeadParams depth;
  heads::DepthBins bins;
};

/// Sections: head_meta (kind, bin range) and head.
Checkpoint save_seg_head(const heads::SegHeadParams& head);
Checkpoint save_depth_head(const heads::DepthHeadParams& head, const heads::DepthBins& bins);
HeadCheckpoint load_head(const Checkpoint& ckpt);

}  // namespace realm::ckpt
