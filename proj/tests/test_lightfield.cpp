#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lfs/light_field.hpp"
#include "lfs/metrics.hpp"
#include "lfs/ops.hpp"
#include "test_util.hpp"

using namespace lfs;
namespace fs = std::filesystem;

namespace {

LightField random_field(Shape shape, std::uint64_t seed) {
  return LightField(test::random_tensor(std::move(shape), seed, 0.0, 1.0));
}

}  // namespace

TEST_CASE("lf4 round-trip is bit-identical") {
  const std::string dir = test::scratch_dir("lf4");
  LightField lf = random_field({3, 3, 8, 8, 1}, 1);
  save_lf4(lf, dir + "/a.lf4");
  LightField back = load_lf4(dir + "/a.lf4");
  CHECK(test::bit_equal(lf.data, back.data));
}

TEST_CASE("lf4 f32 mode round-trips within float precision") {
  const std::string dir = test::scratch_dir("lf4f32");
  LightField lf = random_field({2, 2, 4, 4, 2}, 2);
  save_lf4(lf, dir + "/a.lf4", LfDtype::F32);
  LightField back = load_lf4(dir + "/a.lf4");
  CHECK(test::max_abs_diff(lf.data, back.data) < 1e-7);
}

TEST_CASE("lf4 format errors: magic, truncation") {
  const std::string dir = test::scratch_dir("lf4err");
  {
    std::ofstream os(dir + "/bad.lf4", std::ios::binary);
    os << "NOPE....................";
  }
  CHECK_THROWS_AS(load_lf4(dir + "/bad.lf4"), FormatError);

  LightField lf = random_field({3, 3, 4, 4, 1}, 3);
  save_lf4(lf, dir + "/ok.lf4");
  // Truncate to the payload size of a U=2 field: declared U=3 but data for U=2.
  const auto full = fs::file_size(dir + "/ok.lf4");
  const auto header = full - 3 * 3 * 4 * 4 * sizeof(double);
  fs::resize_file(dir + "/ok.lf4", header + 2 * 2 * 4 * 4 * sizeof(double));
  try {
    load_lf4(dir + "/ok.lf4");
    FAIL("expected truncation error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
}

TEST_CASE("sai-grid round-trips within 8-bit quantization and names missing views") {
  const std::string dir = test::scratch_dir("sai");
  LightField lf = random_field({3, 3, 6, 5, 1}, 4);
  save_sai_grid(lf, dir);
  LightField back = load_sai_grid(dir);
  CHECK(test::max_abs_diff(lf.data, back.data) <= 1.0 / 255.0);

  fs::remove(fs::path(dir) / "view_2_1.png");
  try {
    load_sai_grid(dir);
    FAIL("expected missing-view error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("view_2_1") != std::string::npos);
  }
}

TEST_CASE("epi stacks one spatial row across views") {
  // Zero-disparity field: all views identical, EPI columns constant.
  Tensor view = test::random_tensor({4, 6, 1}, 5);
  Tensor data = Tensor::zeros({3, 3, 4, 6, 1});
  for (int v = 0; v < 3; ++v) {
    for (int u = 0; u < 3; ++u) {
      data.mutable_values().segment((v * 3 + u) * 24, 24) = view.values();
    }
  }
  LightField lf(data);
  Tensor e = epi(lf, 2, 1);
  CHECK(same_shape(e.shape(), Shape{3, 6, 1}));
  for (int u = 0; u < 3; ++u) {
    for (int x = 0; x < 6; ++x) CHECK(e.at(u, x, 0) == view.at(2, x, 0));
  }
  CHECK_THROWS_AS(epi(lf, 99, 0), ArgumentError);
  CHECK_THROWS_AS(epi(lf, 0, 5), ArgumentError);

  // U=1 degenerate: the EPI is the row itself.
  LightField single(test::random_tensor({1, 1, 4, 6, 1}, 6, 0.0, 1.0));
  Tensor e1 = epi(single, 1, 0);
  CHECK(same_shape(e1.shape(), Shape{1, 6, 1}));
  for (int x = 0; x < 6; ++x) CHECK(e1.at(0, x, 0) == single.at(0, 0, 1, x, 0));
}

TEST_CASE("refocus at slope 0 equals the view mean") {
  LightField lf = random_field({3, 3, 8, 8, 2}, 7);
  Tensor r = refocus(lf, 0.0);
  Tape tape;
  Tensor mean = reduce_view_mean(tape, reshape(tape, lf.data, {9, 8, 8, 2}));
  CHECK(test::max_abs_diff(r, mean) <= 1e-12);
}

TEST_CASE("refocus of identical constant views equals the center view at any slope") {
  // Shift-and-average of identical *textured* views blurs along the shift
  // direction, so the identity only holds for shift-invariant content; the
  // aligned-slope identity on textured scenes lives in the synthgen tests.
  Tensor view = Tensor::constant({8, 8, 1}, 0.37);
  Tensor data = Tensor::zeros({3, 3, 8, 8, 1});
  for (int s = 0; s < 9; ++s) data.mutable_values().segment(s * 64, 64) = view.values();
  LightField lf(data);
  Tensor r = refocus(lf, 0.7);
  double max_err = 0.0;
  for (int y = 2; y < 6; ++y) {
    for (int x = 2; x < 6; ++x) {
      max_err = std::max(max_err, std::abs(r.at(y, x, 0) - view.at(y, x, 0)));
    }
  }
  CHECK(max_err < 1e-12);
}

TEST_CASE("psnr closed forms and the 100 dB cap") {
  Tensor a = test::random_tensor({8, 8, 1}, 9, 0.2, 0.8);
  CHECK(psnr(a, a) == 100.0);
  Tensor b = Tensor::from_array(a.shape(), a.values() + 0.1);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK_THROWS_AS(psnr(a, Tensor::zeros({4, 4, 1})), ArgumentError);
}

TEST_CASE("ssim is 1 for identical inputs at any size") {
  for (Shape s : {Shape{8, 8, 1}, Shape{16, 16, 3}, Shape{32, 20, 1}}) {
    Tensor a = test::random_tensor(s, 10 + s[0], 0.0, 1.0);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor a = test::random_tensor({16, 16, 1}, 11);
  Tensor b = test::random_tensor({16, 16, 1}, 12);
  const double s = ssim(a, b);
  CHECK(s < 1.0);
  CHECK(s == ssim(b, a));
}

TEST_CASE("field metrics exclude the center view") {
  LightField a = random_field({3, 3, 8, 8, 1}, 13);
  Tensor modified = Tensor::from_array(a.data.shape(), a.data.values());
  // Perturb only the center view (1,1).
  const std::int64_t block = 8 * 8;
  for (std::int64_t i = 0; i < block; ++i) {
    modified.mutable_values()[(1 * 3 + 1) * block + i] = 0.0;
  }
  LightField b(modified);
  CHECK(psnr(a, b) == 100.0);
  CHECK(ssim(a, b) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("masked psnr ignores pixels outside the mask") {
  Tensor a = Tensor::constant({4, 4, 1}, 0.5);
  Tensor b = Tensor::from_array({4, 4, 1}, a.values());
  b.mutable_values()[0] = 1.0;  // corrupt one pixel
  Tensor mask = Tensor::constant({4, 4}, 1.0);
  CHECK(masked_psnr(a, b, mask) < 100.0);
  mask.mutable_values()[0] = 0.0;
  CHECK(masked_psnr(a, b, mask) == 100.0);
}

TEST_CASE("png quantization rounds half to even") {
  // 0.5/255 scaled: value 127.5 -> 128? round-half-even gives 128 only if odd;
  // check both parities explicitly.
  Tensor img = Tensor::from_values({1, 2, 1}, {127.5 / 255.0, 128.5 / 255.0});
  PngImage png = png_from_image(img);
  CHECK(png.pixels[0] == 128);  // 127.5 rounds to even 128
  CHECK(png.pixels[1] == 128);  // 128.5 rounds to even 128
}
