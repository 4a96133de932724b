#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "pgecap/pipeline.hpp"

using namespace pgecap;

TEST(Iou, HandValues) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-15);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{5, 5, 6, 6}), 0.0);
  EXPECT_EQ(iou(a, Box{2, 0, 4, 2}), 0.0);
  EXPECT_THROW(iou(a, Box{1, 1, 1, 3}), std::invalid_argument);
}

TEST(Iou, SymmetricAndOneOnlyForIdentical) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0, 10);
  for (int k = 0; k < 2000; ++k) {
    const double ax = u(gen), ay = u(gen), bx = u(gen), by = u(gen);
    const Box a{ax, ay, ax + 0.5 + u(gen), ay + 0.5 + u(gen)};
    const Box b{bx, by, bx + 0.5 + u(gen), by + 0.5 + u(gen)};
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_LT(iou(a, b), 1.0);
    EXPECT_NEAR(iou(a, b), pgecap::testing::box_overlap(a, b), 1e-14);
  }
}

TEST(Map50, TrivialCases) {
  const GroundTruth gt{{Box{0, 0, 10, 10}}};
  EXPECT_EQ(map50(std::vector<DetectionSet>{{{Box{0, 0, 10, 10}, kPersonClass, 0.7}}}, gt), 1.0);
  EXPECT_EQ(map50(std::vector<DetectionSet>{{}}, gt), 0.0);
  const std::vector<DetectionSet> fp_then_tp{{{Box{50, 50, 60, 60}, kPersonClass, 0.9},
                                              {Box{0, 0, 10, 10}, kPersonClass, 0.8}}};
  EXPECT_EQ(map50(fp_then_tp, gt), 0.5);
  EXPECT_EQ(pgecap::testing::brute_force_ap(fp_then_tp, gt), 0.5);
}

TEST(Map50, IgnoresOtherClassesAndDuplicates) {
  const GroundTruth gt{{Box{0, 0, 10, 10}}};
  const std::vector<DetectionSet> preds{{{Box{0, 0, 10, 10}, 3, 0.99},
                                         {Box{0, 0, 10, 10}, kPersonClass, 0.9},
                                         {Box{0, 0, 10, 10}, kPersonClass, 0.8}}};
  EXPECT_EQ(map50(preds, gt), 1.0);
}

TEST(Map50, Errors) {
  EXPECT_THROW(map50(std::vector<DetectionSet>{{}, {}}, GroundTruth{{}, {}}), DataError);
  EXPECT_THROW(map50(std::vector<DetectionSet>{{}}, GroundTruth{{}, {}}), std::invalid_argument);
}

TEST(Map50, MatchesBruteForceOracle) {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = pgecap::testing::random_ap_instance(gen);
    const double got = map50(inst.preds, inst.gt);
    EXPECT_NEAR(got, pgecap::testing::brute_force_ap(inst.preds, inst.gt), 1e-9) << "trial " << trial;
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(Map50, InvariantToImageOrder) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = pgecap::testing::random_ap_instance(gen);
    const double before = map50(inst.preds, inst.gt);
    std::reverse(inst.preds.begin(), inst.preds.end());
    std::reverse(inst.gt.begin(), inst.gt.end());
    EXPECT_NEAR(map50(inst.preds, inst.gt), before, 1e-12);
  }
}

TEST(Asr, HandValues) {
  FrameSequence all(300, FrameOutcome{true});
  EXPECT_EQ(asr(all), 100.0);
  FrameSequence f(300, FrameOutcome{false});
  for (int i = 0; i < 282; ++i) f[static_cast<std::size_t>(i)].evaded = true;
  EXPECT_EQ(asr(f), 94.0);
  std::mt19937_64 gen(3);
  for (int k = 0; k < 10; ++k) {
    std::shuffle(f.begin(), f.end(), gen);
    EXPECT_EQ(asr(f), 94.0);
  }
  EXPECT_THROW(asr(FrameSequence{}), std::invalid_argument);
}

TEST(Asr, MeanOverPostures) {
  const std::vector<double> table{95.59, 93.41, 92.75, 94.79};
  EXPECT_NEAR(mean_asr(table), 94.135, 1e-12);
  EXPECT_EQ(mean_asr(std::vector<double>{100, 100, 100, 100}), 100.0);
  EXPECT_EQ(mean_asr(std::vector<double>{42.5}), 42.5);
  EXPECT_THROW(mean_asr(std::vector<double>{}), std::invalid_argument);
}

TEST(FrameEvaded, Predicate) {
  const Box subject{10, 10, 50, 90};
  EXPECT_TRUE(frame_evaded({}, subject));
  EXPECT_FALSE(frame_evaded({{subject, kPersonClass, 0.5}}, subject));
  EXPECT_TRUE(frame_evaded({{subject, kPersonClass, 0.49}}, subject));
  EXPECT_TRUE(frame_evaded({{subject, 2, 0.99}}, subject));
  EXPECT_TRUE(frame_evaded({{Box{60, 10, 100, 90}, kPersonClass, 0.99}}, subject));
}

TEST(Likert, Summary) {
  const std::vector<int> fours(10, 4);
  const auto a = likert_summary(fours);
  EXPECT_EQ(a.mean, 4.0);
  EXPECT_EQ(a.stddev, 0.0);
  const auto b = likert_summary(std::vector<int>{1, 7});
  EXPECT_EQ(b.mean, 4.0);
  EXPECT_NEAR(b.stddev, 4.2426406871, 1e-9);
  EXPECT_THROW(likert_summary(std::vector<int>{1, 8}), std::invalid_argument);
  EXPECT_THROW(likert_summary(std::vector<int>{0, 3}), std::invalid_argument);
  EXPECT_THROW(likert_summary(std::vector<int>{3}), std::invalid_argument);
}

TEST(EvalFrames, PerPostureFromOutcomesAndDetections) {
  std::istringstream in(
      "# mixed records\n"
      "outcome,front,0,1\n"
      "outcome,front,1,0\n"
      "subject,side,0,10,10,50,90\n"
      "det,side,0,0,0.9,12,12,50,88\n"
      "subject,side,1,10,10,50,90\n"
      "det,side,1,0,0.3,12,12,50,88\n"
      "asr,back,92.75\n");
  const auto r = evaluate_frames(in, "mem", 0.5, 0.5);
  ASSERT_EQ(r.postures.size(), 3u);
  std::map<std::string, double> by;
  for (const auto& p : r.postures) by[p.posture] = p.asr;
  EXPECT_EQ(by["front"], 50.0);
  EXPECT_EQ(by["side"], 50.0);
  EXPECT_EQ(by["back"], 92.75);
  EXPECT_NEAR(r.mean, (50.0 + 50.0 + 92.75) / 3.0, 1e-12);
}

TEST(EvalFrames, MalformedLineReported) {
  std::istringstream in("outcome,front,0,1\noutcome,front,1\n");
  try {
    evaluate_frames(in, "frames.csv", 0.5, 0.5);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("frames.csv:2"), std::string::npos) << e.what();
  }
  std::istringstream empty("# nothing\n");
  EXPECT_THROW(evaluate_frames(empty, "x", 0.5, 0.5), DataError);
}
