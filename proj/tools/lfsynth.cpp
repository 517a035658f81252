// lfsynth: corpus generation, training, synthesis and evaluation for the
// single-image light-field pipeline. Machine-readable output goes to stdout
// as JSON; diagnostics go to stderr. Exit codes: 0 success, 2 usage or
// validation failure, 3 runtime numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lfs/lf_ops.hpp"
#include "lfs/light_field.hpp"
#include "lfs/metrics.hpp"
#include "lfs/model.hpp"
#include "lfs/synthgen.hpp"
#include "lfs/trainer.hpp"

namespace {

using nlohmann::json;

bool parse_size(const std::string& s, std::int64_t& h, std::int64_t& w) {
  const auto x = s.find('x');
  if (x == std::string::npos) return false;
  try {
    h = std::stoll(s.substr(0, x));
    w = std::stoll(s.substr(x + 1));
  } catch (...) {
    return false;
  }
  return h > 0 && w > 0;
}

lfs::TrainConfig parse_train_config(const json& j) {
  lfs::TrainConfig c;
  c.total_iters = j.value("total_iters", c.total_iters);
  c.stage1_iters = j.value("stage1_iters", c.stage1_iters);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  if (j.contains("adam")) {
    const json& a = j["adam"];
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  if (j.contains("weights")) {
    const json& w = j["weights"];
    c.weights.lambda_g = w.value("lambda_g", c.weights.lambda_g);
    c.weights.lambda_l = w.value("lambda_l", c.weights.lambda_l);
    c.weights.lambda_tv = w.value("lambda_tv", c.weights.lambda_tv);
    c.weights.lambda_sr = w.value("lambda_sr", c.weights.lambda_sr);
  }
  if (j.contains("gamma_range")) {
    c.gamma_range = {j["gamma_range"][0].get<double>(), j["gamma_range"][1].get<double>()};
  }
  if (j.contains("crop")) {
    c.crop_h = j["crop"][0].get<std::int64_t>();
    c.crop_w = j["crop"][1].get<std::int64_t>();
  }
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.zero_sr_in_stage1 = j.value("zero_sr_in_stage1", c.zero_sr_in_stage1);
  if (j.contains("net")) {
    const json& n = j["net"];
    if (n.contains("input_hw")) {
      c.net.input_h = n["input_hw"][0].get<std::int64_t>();
      c.net.input_w = n["input_hw"][1].get<std::int64_t>();
    }
    c.net.views = n.value("views", c.net.views);
    c.net.channels = n.value("channels", c.net.channels);
    c.net.base_filters = n.value("base_filters", c.net.base_filters);
    c.net.depth = n.value("depth", c.net.depth);
    c.net.eta = n.value("eta", c.net.eta);
    c.net.sr_factor = n.value("sr_factor", c.net.sr_factor);
    if (n.contains("residual_order")) {
      c.net.residual_order =
          lfs::residual_order_from_name(n["residual_order"].get<std::string>());
    }
    c.net.residual_channels_per_view =
        n.value("residual_channels_per_view", c.net.residual_channels_per_view);
  }
  return c;
}

int run_gen_data(std::int64_t scenes, const std::string& size, std::int64_t views,
                 std::uint64_t seed, double eta, const std::string& out) {
  std::int64_t h = 0, w = 0;
  if (!parse_size(size, h, w)) {
    throw lfs::ArgumentError("--size must look like 64x64, got '" + size + "'");
  }
  if (views < 1 || views % 2 == 0) {
    throw lfs::ArgumentError("views must be odd, got " + std::to_string(views));
  }
  lfs::make_dataset(scenes, h, w, views, seed, eta, out);
  std::cout << json{{"manifest", out + "/manifest.json"}}.dump() << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& corpus,
              const std::string& out, const std::string& resume) {
  std::ifstream is(config_path);
  if (!is) throw lfs::IoError("cannot read config: " + config_path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw lfs::FormatError("invalid config JSON: " + std::string(e.what()));
  }
  const lfs::TrainConfig config = parse_train_config(j);
  const lfs::FitResult result = lfs::fit(config, corpus, out, resume);
  std::cout << json{{"checkpoint", result.checkpoint_path}, {"log", result.log_path}}.dump()
            << "\n";
  return 0;
}

int run_synthesize(const std::string& ckpt, const std::string& image_path,
                   const std::string& out, bool x4) {
  const lfs::ModelParams params = lfs::load_checkpoint(ckpt);
  lfs::Tensor image;
  if (image_path.size() > 4 && image_path.substr(image_path.size() - 4) == ".lf4") {
    image = lfs::load_lf4(image_path).center_view();
  } else {
    image = lfs::image_from_png(lfs::read_png(image_path));
  }
  if (image.extent(2) != params.config.channels) {
    std::cerr << "note: converting " << image.extent(2) << "-channel input to luminance\n";
    image = lfs::to_luminance(image);
  }
  const lfs::LightField lf = lfs::synthesize(params, image, x4);
  lfs::save_lf4(lf, out);
  std::cout << json{{"output", out},
                    {"views", lf.angular()},
                    {"height", lf.height()},
                    {"width", lf.width()}}
                   .dump()
            << "\n";
  return 0;
}

int run_refocus(const std::string& lf_path, double slope, const std::string& out) {
  const lfs::LightField lf = lfs::load_lf4(lf_path);
  lfs::write_png(out, lfs::png_from_image(lfs::refocus(lf, slope)));
  std::cout << json{{"output", out}}.dump() << "\n";
  return 0;
}

int run_epi(const std::string& lf_path, std::int64_t row, std::int64_t v,
            const std::string& out) {
  const lfs::LightField lf = lfs::load_lf4(lf_path);
  lfs::write_png(out, lfs::png_from_image(lfs::epi(lf, row, v)));
  std::cout << json{{"output", out}}.dump() << "\n";
  return 0;
}

int run_eval(const std::string& pred, const std::string& truth) {
  const lfs::LightField a = lfs::load_lf4(pred);
  const lfs::LightField b = lfs::load_lf4(truth);
  std::cout << json{{"psnr_db", lfs::psnr(a, b)}, {"ssim", lfs::ssim(a, b)}}.dump() << "\n";
  return 0;
}

int run_flow_vis(const std::string& flow_path, std::int64_t v, std::int64_t u,
                 const std::string& out) {
  const lfs::AppearanceFlowField flow = lfs::load_flow(flow_path);
  lfs::write_png(out, lfs::flow_view_to_png(flow, v, u));
  std::cout << json{{"output", out}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lfsynth: single-image light-field synthesis and super-resolution"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic light-field corpus");
  std::int64_t gen_scenes = 16, gen_views = 5;
  std::string gen_size = "64x64", gen_out;
  std::uint64_t gen_seed = 0;
  double gen_eta = 0.8;
  gen->add_option("--scenes", gen_scenes, "number of scenes")->required();
  gen->add_option("--size", gen_size, "LR extents as HxW")->required();
  gen->add_option("--views", gen_views, "angular extent U (odd)")->required();
  gen->add_option("--seed", gen_seed, "corpus seed")->required();
  gen->add_option("--eta", gen_eta, "shift scale recorded for flow sidecars");
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train on a generated corpus");
  std::string train_config, train_corpus, train_out, train_resume;
  train->add_option("--config", train_config, "JSON training config")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--corpus", train_corpus, "corpus directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume from")
      ->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synthesize", "single image to light field");
  std::string synth_ckpt, synth_image, synth_out;
  bool synth_x4 = false;
  synth->add_option("--ckpt", synth_ckpt, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--image", synth_image, "input PNG (or .lf4, uses its center view)")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output .lf4 path")->required();
  synth->add_flag("--x4", synth_x4, "run the spatial stage twice for 4x output");

  auto* refocus = app.add_subcommand("refocus", "shift-and-average refocused image");
  std::string rf_lf, rf_out;
  double rf_slope = 0.0;
  refocus->add_option("--lf", rf_lf, "input .lf4")->required()->check(CLI::ExistingFile);
  refocus->add_option("--slope", rf_slope, "refocus slope in pixels/view")->required();
  refocus->add_option("--out", rf_out, "output PNG")->required();

  auto* epi = app.add_subcommand("epi", "horizontal epipolar plane image");
  std::string epi_lf, epi_out;
  std::int64_t epi_row = 0, epi_v = 0;
  epi->add_option("--lf", epi_lf, "input .lf4")->required()->check(CLI::ExistingFile);
  epi->add_option("--row", epi_row, "fixed spatial row")->required();
  epi->add_option("--v", epi_v, "fixed vertical view index")->required();
  epi->add_option("--out", epi_out, "output PNG")->required();

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM of a field against ground truth");
  std::string ev_pred, ev_truth;
  ev->add_option("--pred", ev_pred, "predicted .lf4")->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", ev_truth, "ground-truth .lf4")->required()->check(CLI::ExistingFile);

  auto* fv = app.add_subcommand("flow-vis", "color-wheel rendering of a flow view");
  std::string fv_flow, fv_out;
  std::int64_t fv_v = 0, fv_u = 0;
  fv->add_option("--flow", fv_flow, "flow .lf4 (C=2)")->required()->check(CLI::ExistingFile);
  fv->add_option("--v", fv_v, "view row index");
  fv->add_option("--u", fv_u, "view column index");
  fv->add_option("--out", fv_out, "output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) {
      return run_gen_data(gen_scenes, gen_size, gen_views, gen_seed, gen_eta, gen_out);
    }
    if (train->parsed()) return run_train(train_config, train_corpus, train_out, train_resume);
    if (synth->parsed()) return run_synthesize(synth_ckpt, synth_image, synth_out, synth_x4);
    if (refocus->parsed()) return run_refocus(rf_lf, rf_slope, rf_out);
    if (epi->parsed()) return run_epi(epi_lf, epi_row, epi_v, epi_out);
    if (ev->parsed()) return run_eval(ev_pred, ev_truth);
    if (fv->parsed()) return run_flow_vis(fv_flow, fv_v, fv_u, fv_out);
  } catch (const lfs::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const lfs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
