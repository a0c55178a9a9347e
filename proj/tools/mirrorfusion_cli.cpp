// mirrorfusion: forge scenes, render them, filter materials, split categories,
// train the dual-branch model, inpaint mirrors and evaluate.
//
// Every subcommand accepts --config <run.json>. Values resolve as
// command-line flag, then the command's group in the config file, then the
// built-in default. The top-level "seed" key of the config applies to every
// command that has no seed of its own.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mirrorfusion/bench.hpp"
#include "mirrorfusion/checkpoint.hpp"
#include "mirrorfusion/pipeline.hpp"
#include "mirrorfusion/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Default output root: $MIRRORFUSION_OUT, else ./mirrorfusion_out.
fs::path output_root() {
  const char* env = std::getenv("MIRRORFUSION_OUT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("mirrorfusion_out");
}

struct Run {
  std::string config_path;
  json config = json::object();
  bool deterministic = false;

  void load() {
    if (config_path.empty()) return;
    config = mf::io::read_json(config_path);
    if (!config.is_object()) throw mf::IoError(config_path + ": run config must be a JSON object");
  }

  json group(const std::string& name) const {
    if (!config.contains(name)) return json::object();
    const json& g = config.at(name);
    if (!g.is_object()) throw mf::IoError(config_path + ": '" + name + "' must be an object");
    return g;
  }

  /// Flag if given, else config group value, else the fallback.
  template <typename T>
  T pick(const CLI::Option* opt, const T& flag, const std::string& grp, const std::string& key,
         const T& fallback) const {
    if (opt->count() > 0) return flag;
    const json g = group(grp);
    try {
      if (g.contains(key)) return g.at(key).get<T>();
      if (key == "seed" && config.contains("seed")) return config.at("seed").get<T>();
    } catch (const json::exception& e) {
      throw mf::IoError(config_path + ": " + grp + "." + key + ": " + e.what());
    }
    return fallback;
  }
};

/// A flag bound to a value, remembering whether it was given.
template <typename T>
struct Flag {
  T value{};
  CLI::Option* opt = nullptr;
};

template <typename T>
Flag<T>* add(CLI::App* app, Flag<T>& f, const std::string& name, const std::string& help) {
  f.opt = app->add_option(name, f.value, help);
  return &f;
}

void report(const std::string& what) { std::cout << what << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mirror inpainting toolkit: synthetic scenes, dual-branch diffusion, evaluation"};
  app.require_subcommand(1);
  Run run;
  app.add_option("--config", run.config_path, "run config JSON with one group per command")
      ->check(CLI::ExistingFile);
  app.add_flag("--deterministic", run.deterministic,
               "single-threaded execution; outputs are byte-identical across reruns");

  // forge
  auto* forge = app.add_subcommand("forge", "compose random scenes and write scene_<id>.json files");
  Flag<int> forge_n;
  Flag<std::string> forge_out;
  Flag<std::uint64_t> forge_seed;
  Flag<double> forge_spurious;
  add(forge, forge_n, "-n,--n-scenes", "number of scenes (default 16)");
  add(forge, forge_out, "-o,--out", "output directory (default <root>/scenes)");
  add(forge, forge_seed, "--seed", "random seed (default 0)");
  add(forge, forge_spurious, "--spurious-rate", "fraction of drawn objects with a reflection-hiding material");

  // render
  auto* render = app.add_subcommand("render", "render every camera of every scene into a dataset tree");
  Flag<std::string> render_scenes, render_out;
  Flag<int> render_res, render_spp;
  add(render, render_scenes, "-s,--scenes", "scene directory (default <root>/scenes)");
  add(render, render_out, "-o,--out", "dataset directory (default <root>/data)");
  add(render, render_res, "--res", "square resolution in pixels (default 64)");
  add(render, render_spp, "--spp", "jittered samples per pixel (default 4)");

  // filter-materials
  auto* filter = app.add_subcommand("filter-materials", "drop catalog objects whose materials hide reflections");
  Flag<std::string> filter_graphs, filter_catalog, filter_out;
  add(filter, filter_graphs, "-g,--graphs", "material graph map JSON (default <root>/scenes/materials.json)");
  add(filter, filter_catalog, "-c,--catalog", "catalog JSONL (default <root>/scenes/catalog.jsonl)");
  add(filter, filter_out, "-o,--out", "filtered catalog JSONL (default <root>/catalog_filtered.jsonl)");

  // split
  auto* split = app.add_subcommand("split", "hold out the rarest categories as unknown");
  Flag<std::string> split_catalog, split_out;
  Flag<std::size_t> split_n;
  Flag<std::uint64_t> split_seed;
  add(split, split_catalog, "-c,--catalog", "catalog JSONL (default <root>/catalog_filtered.jsonl)");
  add(split, split_n, "-n,--n-unknown", "minimum number of unknown objects (default 2)");
  add(split, split_out, "-o,--out", "split JSON (default <root>/split.json)");
  add(split, split_seed, "--seed", "seed recorded in the split (default 0)");

  // train
  auto* train = app.add_subcommand("train", "train the conditioning branch (config group 'train' is a TrainConfig)");
  Flag<std::string> train_data, train_out;
  Flag<int> train_steps, train_batch;
  Flag<double> train_lr;
  Flag<std::uint64_t> train_seed;
  add(train, train_data, "-d,--dataset", "dataset directory (default <root>/data)");
  add(train, train_out, "-o,--out", "run directory (default <root>/train)");
  add(train, train_steps, "--steps", "optimizer steps");
  add(train, train_batch, "--batch", "batch size");
  add(train, train_lr, "--lr", "learning rate");
  add(train, train_seed, "--seed", "random seed");
  bool train_unfreeze = false;
  train->add_flag("--unfreeze", train_unfreeze, "also train the generation branch");

  // inpaint
  auto* inpaint = app.add_subcommand("inpaint", "fill the mirror of one sample, or of every dataset sample");
  Flag<std::string> inp_ckpt, inp_sample, inp_data, inp_prompt, inp_out, inp_sampler;
  Flag<int> inp_seeds, inp_steps;
  Flag<double> inp_cfg;
  add(inpaint, inp_ckpt, "-k,--checkpoint", "model checkpoint (default <root>/train/checkpoints/last.mfc)");
  add(inpaint, inp_sample, "--sample", "one sample directory");
  add(inpaint, inp_data, "-d,--dataset", "dataset directory, used when --sample is absent (default <root>/data)");
  add(inpaint, inp_prompt, "-p,--prompt", "prompt override; defaults to the sample's own prompt");
  add(inpaint, inp_out, "-o,--out", "output directory (default <root>/generated)");
  add(inpaint, inp_seeds, "--n-seeds", "candidates per sample, seeds 0..n-1 (default 4)");
  add(inpaint, inp_steps, "--steps", "sampling steps (default 50)");
  add(inpaint, inp_cfg, "--cfg", "guidance scale (default 7.5)");
  add(inpaint, inp_sampler, "--sampler", "ddim or ancestral");

  // eval
  auto* eval = app.add_subcommand("eval", "score generated candidates against the dataset");
  Flag<std::string> eval_data, eval_gen, eval_split, eval_out;
  add(eval, eval_data, "-d,--dataset", "dataset directory (default <root>/data)");
  add(eval, eval_gen, "-g,--generated", "generated directory (default <root>/generated)");
  add(eval, eval_split, "--split", "split JSON; samples are grouped known/unknown");
  add(eval, eval_out, "-o,--out", "report JSON (default <root>/report.json)");

  CLI11_PARSE(app, argc, argv);

  try {
    run.load();
    const fs::path root = output_root();
    // Nothing in the toolkit spawns threads, so --deterministic changes
    // nothing today; it stays so scripts keep working if that changes.
    auto str = [&](const Flag<std::string>& f, const char* grp, const char* key, const fs::path& def) {
      return fs::path(run.pick<std::string>(f.opt, f.value, grp, key, def.string()));
    };

    if (forge->parsed()) {
      const int n = run.pick(forge_n.opt, forge_n.value, "forge", "n_scenes", 16);
      const auto seed = run.pick<std::uint64_t>(forge_seed.opt, forge_seed.value, "forge", "seed", 0);
      const double rate = run.pick(forge_spurious.opt, forge_spurious.value, "forge", "spurious_rate", 0.05);
      const fs::path out = str(forge_out, "forge", "out", root / "scenes");
      const auto f = mf::forge_scenes(n, seed, {}, rate);
      mf::write_forge_output(out, f);
      report("forged " + std::to_string(f.scenes.size()) + " scenes (" + std::to_string(f.catalog.entries.size()) +
             " objects drawn) into " + out.string());
    } else if (render->parsed()) {
      mf::RenderOptions opt;
      opt.width = opt.height = run.pick(render_res.opt, render_res.value, "render", "res", 64);
      opt.spp = run.pick(render_spp.opt, render_spp.value, "render", "spp", opt.spp);
      const fs::path scenes = str(render_scenes, "render", "scenes", root / "scenes");
      const fs::path out = str(render_out, "render", "out", root / "data");
      const std::size_t n = mf::render_dataset(scenes, out, opt);
      report("rendered " + std::to_string(n) + " samples into " + out.string());
    } else if (filter->parsed()) {
      const fs::path graphs = str(filter_graphs, "filter", "graphs", root / "scenes" / "materials.json");
      const fs::path catalog = str(filter_catalog, "filter", "catalog", root / "scenes" / "catalog.jsonl");
      const fs::path out = str(filter_out, "filter", "out", root / "catalog_filtered.jsonl");
      mf::FilterStats st;
      const auto kept = mf::filter_catalog(mf::read_catalog(catalog), mf::read_materials(graphs), &st);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      mf::write_catalog(out, kept);
      report("kept " + std::to_string(st.kept) + ", spurious " + std::to_string(st.spurious) +
             ", without graph " + std::to_string(st.missing_graph) + " -> " + out.string());
      for (const auto& id : st.missing_ids) std::cerr << "warning: no material graph for " << id << "\n";
    } else if (split->parsed()) {
      const fs::path catalog = str(split_catalog, "split", "catalog", root / "catalog_filtered.jsonl");
      const fs::path out = str(split_out, "split", "out", root / "split.json");
      const auto n = run.pick<std::size_t>(split_n.opt, split_n.value, "split", "n_unknown", 2);
      const auto seed = run.pick<std::uint64_t>(split_seed.opt, split_seed.value, "split", "seed", 0);
      const auto s = mf::build_split(mf::read_catalog(catalog), n, seed);
      mf::io::write_json(out, s);
      report("known " + std::to_string(s.known_ids.size()) + ", unknown " + std::to_string(s.unknown_ids.size()) +
             " objects -> " + out.string());
    } else if (train->parsed()) {
      json g = run.group("train");
      mf::TrainConfig cfg;
      try {
        cfg = g.get<mf::TrainConfig>();
      } catch (const json::exception& e) {
        throw mf::IoError(run.config_path + ": train: " + e.what());
      } catch (const mf::Error& e) {
        throw mf::IoError(run.config_path + ": " + e.what());
      }
      if (!g.contains("output_dir")) cfg.output_dir = (root / "train").string();
      if (!g.contains("seed") && run.config.contains("seed")) cfg.seed = run.config.at("seed").get<std::uint64_t>();
      if (train_out.opt->count()) cfg.output_dir = train_out.value;
      if (train_steps.opt->count()) cfg.max_steps = train_steps.value;
      if (train_batch.opt->count()) cfg.batch_size = train_batch.value;
      if (train_lr.opt->count()) cfg.learning_rate = train_lr.value;
      if (train_seed.opt->count()) cfg.seed = train_seed.value;
      if (train_unfreeze) cfg.freeze_generation = false;
      const fs::path data = str(train_data, "train", "dataset_dir", root / "data");
      const auto r = mf::run_training(data, cfg);
      report("trained " + std::to_string(r.losses.size()) + " steps, final loss " +
             mf::format_loss(r.losses.back()) + ", checkpoint " + r.last_checkpoint.string());
    } else if (inpaint->parsed()) {
      const fs::path ckpt = str(inp_ckpt, "inpaint", "checkpoint", root / "train" / "checkpoints" / "last.mfc");
      const fs::path out = str(inp_out, "inpaint", "out", root / "generated");
      mf::InpaintOptions opt;
      const int n_seeds = run.pick(inp_seeds.opt, inp_seeds.value, "inpaint", "n_seeds", 4);
      if (n_seeds < 1) throw mf::InvalidArgument("inpaint: --n-seeds must be positive");
      opt.seeds.clear();
      for (int s = 0; s < n_seeds; ++s) opt.seeds.push_back(static_cast<std::uint64_t>(s));
      opt.sampler.steps = run.pick(inp_steps.opt, inp_steps.value, "inpaint", "steps", opt.sampler.steps);
      opt.sampler.cfg_scale = run.pick(inp_cfg.opt, inp_cfg.value, "inpaint", "cfg", opt.sampler.cfg_scale);
      const std::string kind = run.pick<std::string>(inp_sampler.opt, inp_sampler.value, "inpaint", "sampler", "");
      if (!kind.empty()) opt.sampler.kind = mf::parse_sampler_kind(kind);
      auto model = mf::load_checkpoint<float>(ckpt);
      const std::string prompt = run.pick<std::string>(inp_prompt.opt, inp_prompt.value, "inpaint", "prompt", "");
      const std::string sample = run.pick<std::string>(inp_sample.opt, inp_sample.value, "inpaint", "sample", "");
      if (!sample.empty()) {
        mf::inpaint_sample_dir(model, sample, out, opt, prompt);
        report("wrote " + std::to_string(n_seeds) + " candidates into " + out.string());
      } else {
        const fs::path data = str(inp_data, "inpaint", "dataset", root / "data");
        const std::size_t n = mf::inpaint_dataset(model, data, out, opt);
        report("inpainted " + std::to_string(n) + " samples into " + out.string());
      }
    } else if (eval->parsed()) {
      const fs::path data = str(eval_data, "eval", "dataset", root / "data");
      const fs::path gen = str(eval_gen, "eval", "generated", root / "generated");
      const fs::path out = str(eval_out, "eval", "out", root / "report.json");
      const std::string split_path = run.pick<std::string>(eval_split.opt, eval_split.value, "eval", "split", "");
      std::optional<mf::BenchSplit> s;
      if (!split_path.empty()) {
        try {
          s = mf::io::read_json(split_path).get<mf::BenchSplit>();
        } catch (const json::exception& e) {
          throw mf::IoError(split_path + ": not a split file: " + e.what());
        }
      }
      const auto r = mf::evaluate(data, gen, s);
      mf::io::write_json(out, r.to_json());
      report(r.aggregates.at("all").dump(1));
      report("report -> " + out.string());
    }
  } catch (const std::exception& e) {
    std::cerr << "mirrorfusion: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
