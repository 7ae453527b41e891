#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "affectseq/datamodel.hpp"

using namespace affectseq;

TEST_CASE("output dimensions") {
  CHECK(output_dim(TaskKind::VA) == 2);
  CHECK(output_dim(TaskKind::EXPR) == 8);
  CHECK(output_dim(TaskKind::AU) == 12);
  CHECK(label_width(TaskKind::EXPR) == 1);
}

TEST_CASE("task names") {
  for (auto t : {TaskKind::VA, TaskKind::EXPR, TaskKind::AU}) CHECK(parse_task(task_name(t)) == t);
  CHECK(parse_task("EXPR") == TaskKind::EXPR);
  CHECK_THROWS_AS(parse_task("arousal"), ConfigError);
}

TEST_CASE("label ranges are enforced on valid frames only") {
  CHECK_NOTHROW(FrameLabels(TaskKind::VA, {0.5, -1.0, 9.0, 9.0}, {true, false}));
  CHECK_THROWS_AS(FrameLabels(TaskKind::VA, {1.5, 0.0}, {true}), DataError);
  CHECK_THROWS_AS(FrameLabels(TaskKind::EXPR, {8.0}, {true}), DataError);
  CHECK_THROWS_AS(FrameLabels(TaskKind::EXPR, {2.5}, {true}), DataError);
  CHECK_THROWS_AS(FrameLabels(TaskKind::AU, std::vector<double>(12, 0.5), {true}), DataError);
  CHECK_THROWS_AS(FrameLabels(TaskKind::VA, {0.0}, {true}), StructuralError);
  CHECK_THROWS_AS(FrameLabels(TaskKind::VA, {std::nan(""), 0.0}, {true}), DataError);
}

TEST_CASE("frame accessors") {
  FrameLabels l(TaskKind::EXPR, {2.0, 0.0, 7.0}, {true, false, true});
  CHECK(l.size() == 3);
  CHECK(l.valid_count() == 2);
  CHECK(l.expr_class(2) == 7);
  CHECK_FALSE(l.valid(1));
  auto e = FrameLabels::empty(TaskKind::AU, 4);
  CHECK(e.valid_count() == 0);
  CHECK(e.values().size() == 48);
}

TEST_CASE("video record invariants") {
  Matrix<float> f(3, 2, 0.5f);
  CHECK_NOTHROW(VideoRecord("a", f, FrameLabels::empty(TaskKind::VA, 3)));
  CHECK_THROWS_AS(VideoRecord("a", f, FrameLabels::empty(TaskKind::VA, 4)), DataError);
  CHECK_THROWS_AS(VideoRecord("a", Matrix<float>(0, 2), FrameLabels::empty(TaskKind::VA, 0)), DataError);
  f(1, 1) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(VideoRecord("a", f, FrameLabels::empty(TaskKind::VA, 3)), DataError);
}

TEST_CASE("dataset consistency") {
  std::vector<VideoRecord> v;
  v.emplace_back("a", Matrix<float>(2, 3), FrameLabels::empty(TaskKind::VA, 2));
  v.emplace_back("b", Matrix<float>(4, 3), FrameLabels::empty(TaskKind::VA, 4));
  CHECK_NOTHROW(check_dataset_consistency(v));
  v.emplace_back("c", Matrix<float>(4, 5), FrameLabels::empty(TaskKind::VA, 4));
  CHECK_THROWS_AS(check_dataset_consistency(v), DataError);
  v.pop_back();
  v.emplace_back("d", Matrix<float>(4, 3), FrameLabels::empty(TaskKind::AU, 4));
  CHECK_THROWS_AS(check_dataset_consistency(v), DataError);
}

TEST_CASE("matrix payload size is checked") {
  CHECK_THROWS_AS(Matrix<double>(2, 2, std::vector<double>{1.0}), StructuralError);
  Matrix<double> m(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(m(1, 2) == 6.0);
  CHECK(m.row(1)[0] == 4.0);
}
