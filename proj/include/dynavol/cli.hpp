// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Subcommands: generate, train, render, decompose,
// edit, eval. Config precedence: profile defaults < --config file <
// DYNAVOL_* environment < command-line flags; the resolved configuration is
// echoed into the output directory. Exit codes: 0 success, 2 config error,
// 3 data error, 4 checkpoint error, 5 numerical abort.
#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dynavol/checkpoint.hpp"
#include "dynavol/editing.hpp"
#include "dynavol/metrics.hpp"
#include "dynavol/render_eval.hpp"
#include "dynavol/scene_gen.hpp"
#include "dynavol/training.hpp"

namespace dynavol {

namespace cli_detail {

namespace fs = std::filesystem;

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Checkpoint: return 4;
    case ErrorKind::Numeric: return 5;
  }
  return 1;
}

inline const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Checkpoint: return "checkpoint";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

struct CommonArgs {
  std::string dataset, out, config, checkpoint, editspec, renders, scene, pose;
  std::string time_list = "0";
  std::vector<std::string> set_entries;
  std::string profile = "desk";
  uint64_t seed = 0;
  bool seed_given = false;
  int workers = 0;
  int stage = 3;
  bool dry_run = false;
  bool dump_weights = false;
};

inline TrainConfig resolve_config(const CommonArgs& a) {
  TrainConfig cfg;
  if (a.profile == "desk") cfg = TrainConfig::desk_profile();
  else if (a.profile == "full") cfg = TrainConfig::full_profile();
  else throw_config("unknown profile '" + a.profile + "' (expected desk or full)");
  if (!a.config.empty()) {
    std::ifstream f(a.config);
    check(f.good(), ErrorKind::Config, "cannot open config file: " + a.config);
    std::string text((std::istreambuf_iterator<char>(f)), {});
    cfg.parse_text(text);
  }
  for (const auto& kv : a.set_entries) {
    auto eq = kv.find('=');
    check(eq != std::string::npos, ErrorKind::Config, "--set expects key=value, got '" + kv + "'");
    cfg.apply_entry(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed_given) cfg.seed = a.seed;
  if (a.workers > 0) cfg.workers = a.workers;
  cfg.validate();
  return cfg;
}

inline void echo_config(const TrainConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream f(out_dir + "/config_resolved.txt");
  f << cfg.serialize();
}

inline std::vector<double> parse_times(const std::string& list) {
  std::vector<double> out;
  std::istringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw_config("--time expects comma-separated numbers, got '" + tok + "'");
    }
  }
  check(!out.empty(), ErrorKind::Config, "--time list is empty");
  return out;
}

// --pose sources: "frame:<idx>" (needs --dataset) or a pose file:
//   size <w> <h>
//   focal <f>
//   pp <cx> <cy>
//   pose <16 reals row-major>
inline CameraPose resolve_pose(const CommonArgs& a, const Dataset* data) {
  if (a.pose.rfind("frame:", 0) == 0) {
    check(data != nullptr, ErrorKind::Config, "--pose frame:<i> requires --dataset");
    int idx = 0;
    try {
      idx = std::stoi(a.pose.substr(6));
    } catch (const std::exception&) {
      throw_config("malformed --pose '" + a.pose + "'");
    }
    check(idx >= 0 && idx < int(data->frames.size()), ErrorKind::Config,
          strfmt("--pose frame index %d out of range [0, %zu)", idx, data->frames.size()));
    return data->frames[size_t(idx)].pose;
  }
  std::ifstream f(a.pose);
  check(f.good(), ErrorKind::Data, "cannot open pose file: " + a.pose);
  CameraPose cam;
  std::string key;
  bool have_pose = false;
  while (f >> key) {
    if (key == "size") f >> cam.width >> cam.height;
    else if (key == "focal") f >> cam.focal;
    else if (key == "pp") f >> cam.cx >> cam.cy;
    else if (key == "pose") {
      for (auto& v : cam.cam_to_world.m) f >> v;
      have_pose = !f.fail();
    } else
      throw_data("pose file: unknown key '" + key + "'");
  }
  check(have_pose && cam.width > 0, ErrorKind::Data, "pose file incomplete: " + a.pose);
  cam.validate();
  return cam;
}

inline void write_weight_dump(const std::string& path, const RenderResult& r, int w, int h) {
  MaskImage wm(w, h);
  for (size_t i = 0; i < r.fg_weight.size(); i++)
    wm.ids[i] = quantize8(float(r.fg_weight[i]));
  write_pgm(path, wm);
}

// ---------------------------------------------------------------------------

inline int cmd_generate(const CommonArgs& a) {
  check(!a.scene.empty(), ErrorKind::Config, "generate: --scene is required");
  check(!a.out.empty(), ErrorKind::Config, "generate: --out is required");
  SceneSpec spec = parse_scene_spec(a.scene);
  if (a.seed_given) spec.seed = a.seed;
  validate_scene(spec);
  if (a.dry_run) {
    std::cout << "generate: scene " << a.scene << " (" << spec.objects.size() << " objects, T="
              << spec.num_timestamps << ", V=" << spec.initial_views << ") -> " << a.out
              << " [dry-run]\n";
    return 0;
  }
  Dataset ds = generate_scene(spec);
  save_dataset(ds, a.out);
  std::cout << "generate: wrote " << ds.frames.size() << " frames to " << a.out << "\n";
  return 0;
}

inline int cmd_train(const CommonArgs& a) {
  check(!a.dataset.empty(), ErrorKind::Config, "train: --dataset is required");
  check(!a.out.empty(), ErrorKind::Config, "train: --out is required");
  TrainConfig cfg = resolve_config(a);
  if (a.dry_run) {
    std::cout << "train: dataset " << a.dataset << " -> " << a.out << " (stages 1-" << a.stage
              << ") [dry-run]\nresolved config:\n"
              << cfg.serialize();
    return 0;
  }
  Dataset data = load_dataset(a.dataset);
  echo_config(cfg, a.out);
  SceneModel model = a.checkpoint.empty()
                         ? SceneModel::create(cfg, data.scene_bbox, data.num_timestamps)
                         : load_checkpoint(a.checkpoint);
  Trainer tr(std::move(model), data, a.out);
  tr.run(a.stage);
  std::cout << "train: completed stage " << tr.model().stage << ", checkpoints in " << a.out
            << "\n";
  return 0;
}

inline int cmd_render(const CommonArgs& a) {
  check(!a.checkpoint.empty(), ErrorKind::Config, "render: --checkpoint is required");
  check(!a.out.empty(), ErrorKind::Config, "render: --out is required");
  check(!a.pose.empty(), ErrorKind::Config, "render: --pose is required");
  std::vector<double> times = parse_times(a.time_list);
  if (a.dry_run) {
    std::cout << "render: checkpoint " << a.checkpoint << ", " << times.size() << " time(s) -> "
              << a.out << " [dry-run]\n";
    return 0;
  }
  SceneModel model = load_checkpoint(a.checkpoint);
  std::optional<Dataset> data;
  if (!a.dataset.empty()) data = load_dataset(a.dataset);
  CameraPose cam = resolve_pose(a, data ? &*data : nullptr);
  fs::create_directories(a.out);
  for (size_t i = 0; i < times.size(); i++) {
    RenderResult r = render_view_model(model, cam, times[i]);
    std::string path = a.out + strfmt("/render_%04zu.ppm", i);
    write_ppm(path, r.image);
    if (a.dump_weights) write_weight_dump(a.out + strfmt("/weights_%04zu.pgm", i), r, cam.width, cam.height);
  }
  std::cout << "render: wrote " << times.size() << " image(s) to " << a.out << "\n";
  return 0;
}

inline nlohmann::json frame_metrics(SceneModel& model, const Frame& fr, const std::string& out_dir,
                                    size_t index, bool write_files) {
  RenderResult r = render_view_model(model, fr.pose, fr.time, model.stage >= 3);
  nlohmann::json entry;
  entry["frame"] = index;
  entry["time"] = fr.time;
  entry["psnr"] = psnr(r.image, fr.image);
  entry["ssim"] = ssim(r.image, fr.image);
  if (model.stage >= 3) {
    SegmentationMap seg = segment(r, fr.pose.width, fr.pose.height);
    if (fr.mask) entry["fg_ari"] = fg_ari(seg.labels, fr.mask->ids);
    if (write_files) {
      write_pgm(out_dir + strfmt("/seg_%04zu.pgm", index), seg.to_mask());
      write_ppm(out_dir + strfmt("/seg_%04zu.ppm", index), colorize_labels(seg.to_mask()));
    }
  }
  if (write_files) write_ppm(out_dir + strfmt("/render_%04zu.ppm", index), r.image);
  return entry;
}

inline int cmd_decompose(const CommonArgs& a) {
  check(!a.checkpoint.empty(), ErrorKind::Config, "decompose: --checkpoint is required");
  check(!a.dataset.empty(), ErrorKind::Config, "decompose: --dataset is required");
  check(!a.out.empty(), ErrorKind::Config, "decompose: --out is required");
  if (a.dry_run) {
    std::cout << "decompose: checkpoint " << a.checkpoint << " over " << a.dataset << " -> "
              << a.out << " [dry-run]\n";
    return 0;
  }
  SceneModel model = load_checkpoint(a.checkpoint);
  check(model.stage >= 3, ErrorKind::Checkpoint,
        "decompose requires a stage-3 checkpoint (found stage " + std::to_string(model.stage) + ")");
  Dataset data = load_dataset(a.dataset);
  fs::create_directories(a.out);
  nlohmann::json report;
  report["frames"] = nlohmann::json::array();
  double psnr_sum = 0, ssim_sum = 0, ari_sum = 0;
  int ari_count = 0;
  for (size_t i = 0; i < data.frames.size(); i++) {
    nlohmann::json entry = frame_metrics(model, data.frames[i], a.out, i, true);
    psnr_sum += double(entry["psnr"]);
    ssim_sum += double(entry["ssim"]);
    if (entry.contains("fg_ari")) {
      ari_sum += double(entry["fg_ari"]);
      ari_count++;
    }
    report["frames"].push_back(entry);
  }
  report["mean_psnr"] = psnr_sum / double(data.frames.size());
  report["mean_ssim"] = ssim_sum / double(data.frames.size());
  if (ari_count > 0) report["mean_fg_ari"] = ari_sum / ari_count;
  std::ofstream(a.out + "/report.json") << report.dump(2) << "\n";
  std::cout << "decompose: report and segmentation maps in " << a.out << "\n";
  return 0;
}

inline int cmd_edit(const CommonArgs& a) {
  check(!a.checkpoint.empty(), ErrorKind::Config, "edit: --checkpoint is required");
  check(!a.editspec.empty(), ErrorKind::Config, "edit: --editspec is required");
  check(!a.out.empty(), ErrorKind::Config, "edit: --out is required");
  check(!a.pose.empty(), ErrorKind::Config, "edit: --pose is required");
  EditSpec spec = parse_edit_spec(a.editspec);
  std::vector<double> times = parse_times(a.time_list);
  if (a.dry_run) {
    std::cout << "edit: " << spec.edits.size() << " edit(s) on " << a.checkpoint << " -> " << a.out
              << " [dry-run]\n";
    return 0;
  }
  SceneModel model = load_checkpoint(a.checkpoint);
  check(model.stage >= 3, ErrorKind::Checkpoint,
        "edit requires a stage-3 checkpoint (found stage " + std::to_string(model.stage) + ")");
  std::optional<Dataset> data;
  if (!a.dataset.empty()) data = load_dataset(a.dataset);
  CameraPose cam = resolve_pose(a, data ? &*data : nullptr);
  SceneModel edited = apply_edits(model, spec);
  fs::create_directories(a.out);
  for (size_t i = 0; i < times.size(); i++) {
    RenderResult r = render_view_model(edited, cam, times[i], true);
    write_ppm(a.out + strfmt("/render_%04zu.ppm", i), r.image);
    SegmentationMap seg = segment(r, cam.width, cam.height);
    write_pgm(a.out + strfmt("/seg_%04zu.pgm", i), seg.to_mask());
    write_ppm(a.out + strfmt("/seg_%04zu.ppm", i), colorize_labels(seg.to_mask()));
  }
  std::cout << "edit: wrote " << times.size() << " edited view(s) to " << a.out << "\n";
  return 0;
}

inline int cmd_eval(const CommonArgs& a) {
  check(!a.renders.empty(), ErrorKind::Config, "eval: --renders is required");
  check(!a.dataset.empty(), ErrorKind::Config, "eval: --dataset is required");
  if (a.dry_run) {
    std::cout << "eval: renders " << a.renders << " vs dataset " << a.dataset << " [dry-run]\n";
    return 0;
  }
  Dataset data = load_dataset(a.dataset);
  nlohmann::json report;
  report["frames"] = nlohmann::json::array();
  double psnr_sum = 0, ssim_sum = 0;
  int count = 0;
  for (size_t i = 0; i < data.frames.size(); i++) {
    std::string path = a.renders + strfmt("/render_%04zu.ppm", i);
    if (!fs::exists(path)) continue;
    Image img = read_ppm(path);
    nlohmann::json entry;
    entry["frame"] = i;
    entry["psnr"] = psnr(img, data.frames[i].image);
    entry["ssim"] = ssim(img, data.frames[i].image);
    psnr_sum += double(entry["psnr"]);
    ssim_sum += double(entry["ssim"]);
    count++;
    report["frames"].push_back(entry);
  }
  check(count > 0, ErrorKind::Data, "eval: no render_NNNN.ppm files matched dataset frames in " + a.renders);
  report["mean_psnr"] = psnr_sum / count;
  report["mean_ssim"] = ssim_sum / count;
  std::string out = a.out.empty() ? a.renders : a.out;
  fs::create_directories(out);
  std::ofstream(out + "/report.json") << report.dump(2) << "\n";
  std::cout << "eval: " << count << " frame(s), mean PSNR "
            << strfmt("%.2f", psnr_sum / count) << " dB, report in " << out << "\n";
  return 0;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
  using namespace cli_detail;
  CLI::App app{"object-centric decomposition of dynamic scenes via voxel rendering"};
  app.require_subcommand(1);
  CommonArgs a;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--dataset", a.dataset, "dataset directory")->envname("DYNAVOL_DATASET");
    cmd->add_option("--out", a.out, "output directory")->envname("DYNAVOL_OUT");
    cmd->add_option("--seed", a.seed, "RNG seed")->envname("DYNAVOL_SEED")->each([&](const std::string&) {
      a.seed_given = true;
    });
    cmd->add_option("--workers", a.workers, "ray-batch worker threads (1 = deterministic reference)")
        ->envname("DYNAVOL_WORKERS");
    cmd->add_flag("--dry-run", a.dry_run, "validate inputs, print the resolved plan, do nothing");
  };

  CLI::App* generate = app.add_subcommand("generate", "render an analytic scene to a dataset");
  add_common(generate);
  generate->add_option("--scene", a.scene, "scene spec file")->envname("DYNAVOL_SCENE");

  CLI::App* train = app.add_subcommand("train", "run the three-stage optimization");
  add_common(train);
  train->add_option("--config", a.config, "config file (key=value lines)")->envname("DYNAVOL_CONFIG");
  train->add_option("--profile", a.profile, "base profile: desk or full")->envname("DYNAVOL_PROFILE");
  train->add_option("--set", a.set_entries, "config override key=value (repeatable)");
  train->add_option("--stage", a.stage, "stop after this stage (1-3)")->envname("DYNAVOL_STAGE");
  train->add_option("--resume", a.checkpoint, "resume from a checkpoint");

  CLI::App* render = app.add_subcommand("render", "render novel views from a checkpoint");
  add_common(render);
  render->add_option("--checkpoint", a.checkpoint, "model checkpoint")->envname("DYNAVOL_CHECKPOINT");
  render->add_option("--pose", a.pose, "camera: frame:<idx> or a pose file")->envname("DYNAVOL_POSE");
  render->add_option("--time", a.time_list, "comma-separated normalized times")->envname("DYNAVOL_TIME");
  render->add_flag("--dump-weights", a.dump_weights, "also write per-pixel foreground weights");

  CLI::App* decompose = app.add_subcommand("decompose", "segmentation maps and metrics over a dataset");
  add_common(decompose);
  decompose->add_option("--checkpoint", a.checkpoint, "model checkpoint")->envname("DYNAVOL_CHECKPOINT");

  CLI::App* edit = app.add_subcommand("edit", "apply scene edits and render the result");
  add_common(edit);
  edit->add_option("--checkpoint", a.checkpoint, "model checkpoint")->envname("DYNAVOL_CHECKPOINT");
  edit->add_option("--editspec", a.editspec, "edit spec file")->envname("DYNAVOL_EDITSPEC");
  edit->add_option("--pose", a.pose, "camera: frame:<idx> or a pose file")->envname("DYNAVOL_POSE");
  edit->add_option("--time", a.time_list, "comma-separated normalized times")->envname("DYNAVOL_TIME");

  CLI::App* eval = app.add_subcommand("eval", "PSNR/SSIM of rendered images against a dataset");
  add_common(eval);
  eval->add_option("--renders", a.renders, "directory of render_NNNN.ppm files")->envname("DYNAVOL_RENDERS");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error code=config msg=\"" << e.what() << "\"\n";
    return 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(a);
    if (train->parsed()) return cmd_train(a);
    if (render->parsed()) return cmd_render(a);
    if (decompose->parsed()) return cmd_decompose(a);
    if (edit->parsed()) return cmd_edit(a);
    if (eval->parsed()) return cmd_eval(a);
  } catch (const Error& e) {
    std::cerr << "error code=" << kind_name(e.kind()) << " msg=\"" << e.what() << "\"\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error code=internal msg=\"" << e.what() << "\"\n";
    return 1;
  }
  return 0;
}

}  // namespace dynavol
