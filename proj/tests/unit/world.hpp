// SPDX-License-Identifier: Apache-2.0
// A small shared world for unit tests: catalog, split and a quick teacher.
#pragma once

#include <filesystem>
#include <string>

#include "recalign/catalog.hpp"
#include "recalign/instructions.hpp"
#include "recalign/teacher.hpp"

namespace testing_world {

struct World {
  recalign::Catalog catalog;
  recalign::SplitDataset split;
  recalign::TeacherModel teacher;
  recalign::TemplateSet templates = recalign::TemplateSet::builtin();

  recalign::SampleContext context(recalign::Stage stage) const { return {catalog, split, teacher, templates, stage}; }
};

inline const World& world() {
  static const World w = [] {
    World w;
    w.catalog = recalign::synth_catalog(120, 6, 300, 3);
    w.split = recalign::leave_one_out_split(w.catalog, 10);
    recalign::TeacherConfig tc;
    tc.kind = recalign::TeacherKind::markov_popularity;
    w.teacher = recalign::train_teacher(w.split, w.catalog.num_items(), tc);
    return w;
  }();
  return w;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::path(RECALIGN_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_world
