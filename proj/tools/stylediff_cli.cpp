// Command-line front end: dataset generation, the three training stages,
// sampling, style prediction, style interpolation and the full evaluation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "stylediff/config.hpp"
#include "stylediff/dataset_io.hpp"
#include "stylediff/io.hpp"
#include "stylediff/kernels.hpp"
#include "stylediff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stylediff;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

std::vector<SynthClip> train_split(const LoadedDataset& data) {
  std::vector<SynthClip> out;
  for (const auto& c : data.clips) {
    if (c.speaker < data.world.train_speakers) out.push_back(c);
  }
  if (out.empty()) throw std::runtime_error("dataset has no training speakers");
  return out;
}

std::string loss_path(const std::string& out) { return out + ".losses.csv"; }

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "Settings file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", common.seed, "Seed for this stage");
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("STYLEDIFF_THREADS")) {
    kernels::set_thread_limit(std::atoi(threads));
  }

  CLI::App app{"Style-controllable diffusion talking-face motion generator"};
  app.require_subcommand(1);
  Common common;

  // gen-data
  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", data_out, "Output directory")->required();

  // train-expert
  std::string data_dir, out_path;
  bool uncond_expert = false;
  auto* texp = app.add_subcommand("train-expert", "Pretrain the lip expert");
  add_common(texp, common);
  texp->add_option("--data", data_dir, "Dataset directory")->required();
  texp->add_option("--out", out_path, "Checkpoint path")->required();
  texp->add_flag("--uncond-lip-expert", uncond_expert, "Ignore the style reference");

  // train-denoiser
  std::string expert_path;
  bool no_expert = false;
  auto* tden = app.add_subcommand("train-denoiser", "Train the motion denoiser");
  add_common(tden, common);
  tden->add_option("--data", data_dir, "Dataset directory")->required();
  tden->add_option("--expert", expert_path, "Frozen lip expert checkpoint");
  tden->add_option("--out", out_path, "Checkpoint path")->required();
  tden->add_flag("--no-lip-expert", no_expert, "Train without the sync loss");

  // train-predictor
  std::string denoiser_path;
  bool no_speaker = false, no_cross_id = false, regression = false;
  auto* tpred = app.add_subcommand("train-predictor", "Train the style predictor");
  add_common(tpred, common);
  tpred->add_option("--data", data_dir, "Dataset directory")->required();
  tpred->add_option("--denoiser", denoiser_path, "Frozen denoiser checkpoint")->required();
  tpred->add_option("--out", out_path, "Checkpoint path")->required();
  tpred->add_flag("--no-speaker-info", no_speaker, "Zero the identity input");
  tpred->add_flag("--no-cross-id", no_cross_id, "Take identity from the target clip itself");
  tpred->add_flag("--regression-predictor", regression, "One-shot regression instead of diffusion");

  // sample
  std::string audio_path, reference_path, code_path;
  double omega = 1.0;
  std::size_t ddim_steps = 10;
  bool ddpm = false;
  auto* samp = app.add_subcommand("sample", "Generate motion for an audio sequence");
  add_common(samp, common);
  samp->add_option("--denoiser", denoiser_path, "Denoiser checkpoint")->required();
  samp->add_option("--audio", audio_path, "Audio features (SDMO)")->required();
  auto* ref_opt = samp->add_option("--reference", reference_path, "Style reference motion (SDMO)");
  auto* code_opt = samp->add_option("--style-code", code_path, "Style code (SDSC)");
  ref_opt->excludes(code_opt);
  samp->add_option("--omega", omega, "Guidance scale in [0, 4]");
  samp->add_option("--ddim-steps", ddim_steps, "Accelerated sampling steps");
  samp->add_flag("--ddpm", ddpm, "Full ancestral sampling");
  samp->add_option("--out", out_path, "Motion output (SDMO)")->required();

  // predict-style
  std::string predictor_path, identity_path;
  auto* pstyle = app.add_subcommand("predict-style", "Predict a style code from audio and identity");
  add_common(pstyle, common);
  pstyle->add_option("--predictor", predictor_path, "Predictor checkpoint")->required();
  pstyle->add_option("--audio", audio_path, "Audio features (SDMO)")->required();
  pstyle->add_option("--identity", identity_path, "Identity parameters (SDMO, one row)")->required();
  pstyle->add_option("--out", out_path, "Style code output (SDSC)")->required();

  // interpolate
  std::string code_a_path, code_b_path;
  std::vector<double> alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  auto* interp = app.add_subcommand("interpolate", "Generate motion along a blend of two style codes");
  add_common(interp, common);
  interp->add_option("--denoiser", denoiser_path, "Denoiser checkpoint")->required();
  interp->add_option("--audio", audio_path, "Audio features (SDMO)")->required();
  interp->add_option("--code-a", code_a_path, "First style code (SDSC)")->required();
  interp->add_option("--code-b", code_b_path, "Second style code (SDSC)")->required();
  interp->add_option("--alpha", alphas, "Blend weights toward the second code");
  interp->add_option("--omega", omega, "Guidance scale in [0, 4]");
  interp->add_option("--ddim-steps", ddim_steps, "Accelerated sampling steps");
  interp->add_option("--out", out_path, "Output directory")->required();

  // eval
  bool quick = false, skip_ablations = false;
  auto* ev = app.add_subcommand("eval", "Train every model and write the metric tables");
  add_common(ev, common);
  ev->add_option("--out", out_path, "Output directory")->required();
  ev->add_flag("--quick", quick, "A few steps per stage");
  ev->add_flag("--no-ablations", skip_ablations, "Skip the comparison models");
  ev->add_flag("--regression-predictor", regression, "Also train the regression predictor");
  ev->add_option("--omega", omega, "Guidance scale in [0, 4]");
  ev->add_option("--ddim-steps", ddim_steps, "Accelerated sampling steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    PipelineConfig cfg = quick ? PipelineConfig::quick() : PipelineConfig{};
    if (!common.config_path.empty()) cfg.apply(Config::load(common.config_path));

    auto sampler_config = [&] {
      SamplerConfig sc;
      sc.omega = omega;
      sc.mode = ddpm ? SamplerMode::ddpm : SamplerMode::ddim;
      sc.ddim_steps = ddim_steps;
      sc.seed = common.seed.value_or(cfg.sample_seed);
      return sc;
    };

    if (gen->parsed()) {
      if (common.seed) cfg.world.seed = *common.seed;
      write_dataset(SynthWorld(cfg.world), data_out);
      std::cout << "wrote dataset to " << data_out << "\n";
    } else if (texp->parsed()) {
      const LoadedDataset data = load_dataset(data_dir);
      const SynthWorld world(data.world);
      LipExpertConfig ec = cfg.expert_model;
      ec.feature_dim = data.world.feature_dim;
      ec.motion_dim = data.world.motion_dim;
      ec.style_conditioned = !uncond_expert;
      if (common.seed) cfg.expert_train.seed = *common.seed;
      LipExpert<float> expert(ec, world.face_basis(), cfg.init_seed + 1);
      LossLog log(loss_path(out_path));
      const auto r = train_expert(expert, train_split(data), cfg.expert_train, &log);
      write_checkpoint(out_path, expert.state());
      std::cout << "expert loss " << format_real(r.first_loss) << " -> " << format_real(r.final_loss) << "\n";
    } else if (tden->parsed()) {
      if (no_expert == !expert_path.empty()) {
        throw UsageError("train-denoiser needs exactly one of --expert or --no-lip-expert");
      }
      const LoadedDataset data = load_dataset(data_dir);
      std::unique_ptr<LipExpert<float>> expert;
      if (!no_expert) expert = LipExpert<float>::from_state(read_checkpoint(expert_path));
      DenoiserConfig dc = cfg.denoiser_model;
      dc.feature_dim = data.world.feature_dim;
      dc.motion_dim = data.world.motion_dim;
      dc.half_window = data.world.half_window;
      if (common.seed) cfg.denoiser_train.seed = *common.seed;
      Denoiser<float> model(dc, cfg.init_seed + 3);
      LossLog log(loss_path(out_path));
      const auto schedule = DiffusionSchedule::default_linear(cfg.diffusion_steps);
      const auto r = train_denoiser(model, expert.get(), train_split(data), schedule, cfg.denoiser_train, &log);
      write_checkpoint(out_path, model.state());
      std::cout << "denoise loss " << format_real(r.first_denoise_loss) << " -> "
                << format_real(r.final_denoise_loss) << ", null references " << r.null_references << "/"
                << r.references_seen << "\n";
    } else if (tpred->parsed()) {
      const LoadedDataset data = load_dataset(data_dir);
      const auto denoiser = Denoiser<float>::from_state(read_checkpoint(denoiser_path));
      PredictorConfig pc = cfg.predictor_model;
      pc.feature_dim = data.world.feature_dim;
      pc.identity_dim = data.world.identity_dim;
      pc.code_dim = denoiser->config().code_dim();
      pc.use_speaker = pc.use_speaker && !no_speaker;
      pc.regression = regression;
      if (no_cross_id) cfg.predictor_train.cross_id = false;
      if (common.seed) cfg.predictor_train.seed = *common.seed;
      StylePredictor<float> predictor(pc, cfg.init_seed + 4);
      LossLog log(loss_path(out_path));
      const auto schedule = DiffusionSchedule::default_linear(cfg.diffusion_steps);
      const auto r = train_predictor(predictor, *denoiser, train_split(data), schedule, cfg.predictor_train, &log);
      write_checkpoint(out_path, predictor.state());
      std::cout << "predictor loss " << format_real(r.first_loss) << " -> " << format_real(r.final_loss) << "\n";
    } else if (samp->parsed()) {
      if (reference_path.empty() == code_path.empty()) {
        throw UsageError("sample needs exactly one of --reference or --style-code");
      }
      const auto model = Denoiser<float>::from_state(read_checkpoint(denoiser_path));
      const Tensor<float> audio = read_matrix(audio_path);
      Tensor<float> code;
      if (!reference_path.empty()) {
        code = model->style_code(read_matrix(reference_path));
      } else {
        const auto v = read_style_code(code_path);
        code = Tensor<float>({1, v.size()}, v);
      }
      const auto schedule = DiffusionSchedule::default_linear(cfg.diffusion_steps);
      write_matrix(out_path, generate_sequence(*model, schedule, audio, code, sampler_config()));
      std::cout << "wrote " << audio.rows() << " frames to " << out_path << "\n";
    } else if (pstyle->parsed()) {
      const auto predictor = StylePredictor<float>::from_state(read_checkpoint(predictor_path));
      const Tensor<float> audio = read_matrix(audio_path);
      const Tensor<float> identity = read_matrix(identity_path);
      if (identity.rows() != 1) throw UsageError("--identity must hold a single row");
      const auto schedule = DiffusionSchedule::default_linear(cfg.diffusion_steps);
      const Tensor<float> code =
          predictor->sample(audio, audio.rows(), identity, schedule, common.seed.value_or(cfg.sample_seed));
      write_style_code(out_path, {code.data(), code.data() + code.size()});
      std::cout << "wrote style code to " << out_path << "\n";
    } else if (interp->parsed()) {
      const auto model = Denoiser<float>::from_state(read_checkpoint(denoiser_path));
      const Tensor<float> audio = read_matrix(audio_path);
      const auto a = read_style_code(code_a_path);
      const auto b = read_style_code(code_b_path);
      const auto schedule = DiffusionSchedule::default_linear(cfg.diffusion_steps);
      fs::create_directories(out_path);
      CsvWriter index(fs::path(out_path) / "interpolation.csv", {"alpha", "file"});
      for (std::size_t i = 0; i < alphas.size(); ++i) {
        const auto blend = interpolate_styles(a, b, alphas[i]);
        const Tensor<float> code({1, blend.size()}, blend);
        const std::string file = "alpha_" + std::to_string(i) + ".sdmo";
        write_matrix(fs::path(out_path) / file, generate_sequence(*model, schedule, audio, code, sampler_config()));
        index.row({format_real(alphas[i]), file});
      }
      std::cout << "wrote " << alphas.size() << " sequences to " << out_path << "\n";
    } else if (ev->parsed()) {
      if (skip_ablations) cfg.ablations = false;
      if (regression) cfg.regression_predictor = true;
      if (ev->count("--omega")) cfg.omega = omega;
      if (ev->count("--ddim-steps")) cfg.ddim_steps = ddim_steps;
      if (common.seed) cfg.init_seed = *common.seed;
      run_pipeline(cfg, out_path, &std::cout);
      std::cout << "metrics written to " << (fs::path(out_path) / "metrics.csv").string() << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
