#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pil/dataset_io.hpp"
#include "pil/error.hpp"
#include "pil/nonlinear_world.hpp"

using namespace pil;

namespace {

std::filesystem::path scratch(const std::string& name)
{
  const auto dir = std::filesystem::temp_directory_path() / "pil_unit_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

TrajectoryDataset pendulum_data()
{
  const Pendulum pend;
  RngStream rng(3);
  auto ds = generate_nonlinear_dataset(pend, pendulum_expert(pend), 3, 12, NoiseModel::uniform(Vec::Constant(2, 1.0)),
                                       NoiseModel::uniform(Vec::Constant(2, 0.01)), NoiseModel::uniform(Vec::Constant(1, 0.1)),
                                       ObsEncoder::trig_angle(pend.periodic()), rng);
  ds.meta.expert = "energy_lqr";
  return ds;
}

}  // namespace

TEST(Doubles, ShortestRoundTrip)
{
  for (double v : {0.1 + 0.2, 1e-300, -123456.789, 5e-324, 1.0 / 3.0}) {
    const std::string s = format_double(v);
    EXPECT_EQ(parse_double(s), v) << s;
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_THROW(parse_double("1.0abc"), Error);
}

TEST(DatasetCsv, RoundTripIsExact)
{
  const auto ds = pendulum_data();
  const auto path = scratch("pend.csv");
  write_dataset(ds, path);
  EXPECT_TRUE(std::filesystem::exists(sidecar_path(path)));
  const auto back = read_dataset(path, ExpectedDims{2, 1, 3});
  EXPECT_EQ(back.meta.encoder, "trig_angle");
  EXPECT_EQ(back.meta.expert, "energy_lqr");
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.trajectories[i].y, ds.trajectories[i].y);
    EXPECT_EQ(back.trajectories[i].v, ds.trajectories[i].v);
    EXPECT_EQ(back.trajectories[i].x, ds.trajectories[i].x);
    EXPECT_EQ(back.trajectories[i].u, ds.trajectories[i].u);
  }
  EXPECT_EQ(back.meta.xi.kind(), NoiseKind::Uniform);
}

TEST(DatasetCsv, DimensionMismatchIsShapeError)
{
  const auto path = scratch("pend2.csv");
  write_dataset(pendulum_data(), path);
  try {
    read_dataset(path, ExpectedDims{2, 1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(DatasetCsv, MalformedFilesAreIoErrors)
{
  const auto path = scratch("pend3.csv");
  write_dataset(pendulum_data(), path);
  {
    std::ofstream f(path, std::ios::app);
    f << "0,1,not-a-number\n";
  }
  EXPECT_THROW(read_dataset(path), Error);
  try {
    read_dataset(scratch("missing.csv"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST(MatrixBundle, RoundTrip)
{
  MatrixBundle b;
  Mat K(1, 2);
  K << -0.1 - 0.2, 3.5e-17;
  b.items.push_back({"K", K});
  b.items.push_back({"G1", Mat::Identity(2, 2)});
  b.meta = {{"method", "pil"}};
  const auto path = scratch("bundle.csv");
  write_matrices(b, path);
  const MatrixBundle back = read_matrices(path);
  EXPECT_EQ(back.get("K"), K);
  EXPECT_EQ(back.get("G1"), Mat::Identity(2, 2));
  EXPECT_TRUE(back.contains("G1"));
  EXPECT_EQ(back.meta["method"], "pil");
  EXPECT_THROW(back.get("G9"), Error);
}

TEST(NoiseJson, RoundTripAllKinds)
{
  Mat cov(2, 2);
  cov << 1.0, 0.1, 0.1, 0.5;
  for (const NoiseModel& nm : {NoiseModel::none(3), NoiseModel::gaussian(cov), NoiseModel::uniform(Vec::Constant(2, 0.3))}) {
    const NoiseModel back = noise_from_json(noise_to_json(nm));
    EXPECT_EQ(back.kind(), nm.kind());
    EXPECT_EQ(back.dim(), nm.dim());
    EXPECT_EQ(back.second_moment(), nm.second_moment());
  }
}
