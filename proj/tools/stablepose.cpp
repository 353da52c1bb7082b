// Command-line surface: dataset generation, training, sampling, evaluation,
// and the ablation comparison. Every subcommand with a --seed is byte-for-byte
// reproducible; catalogs come from the builtin set unless STABLEPOSE_CATALOG
// points at a catalog file.
//
// Exit codes: 0 success, 2 validation error (bad flags, malformed or
// mismatched files), 3 simulation/training fault.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stablepose/checkpoint.hpp"
#include "stablepose/dataset.hpp"
#include "stablepose/harness.hpp"
#include "stablepose/training.hpp"

namespace sp = stablepose;

namespace {

std::string pose_json(const sp::Pose& p) { return sp::detail::format_pose(p); }

int cmd_gen_data(const std::string& out, int blocks, int count, std::uint64_t seed,
                 const std::string& mode, const std::vector<std::string>& shapes) {
  if (mode != "placement" && mode != "stacking")
    throw sp::ValidationError("--mode must be placement or stacking");
  if (blocks < 1) throw sp::ValidationError("--blocks must be >= 1");
  if (count < 0) throw sp::ValidationError("--count must be >= 0");

  sp::ShapeCatalog catalog = sp::default_catalog();
  sp::SimConfig sim;
  sp::GenOptions opt;
  opt.shapes = shapes;
  if (mode == "stacking") {
    opt.stack_bias = true;
    opt.require_block_contact = true;
  }

  sp::DatasetInfo info;
  info.mode = mode;
  info.seed = seed;
  info.blocks = blocks;
  info.catalog_hash = sp::catalog_hash_hex(catalog);

  sp::DatasetWriter writer(out, info);
  int failures = 0;
  int report_every = std::max(1, count / 10);
  for (int i = 0; i < count; ++i) {
    sp::Rng rng = sp::Rng::stream(seed, static_cast<std::uint64_t>(i) + 1);
    try {
      sp::Scene scene = sp::generate_stable_scene(blocks, catalog, rng, sim, opt);
      writer.add(scene, static_cast<std::uint64_t>(i) + 1);
    } catch (const sp::SimFault& e) {
      ++failures;
      std::fprintf(stderr, "scene %d rejected: %s\n", i, e.what());
    }
    if ((i + 1) % report_every == 0)
      std::fprintf(stderr, "generated %zu/%d scenes (%d rejected)\n", writer.count(), count, failures);
  }
  std::size_t written = writer.count();
  writer.finalize();
  std::fprintf(stderr, "wrote %zu records to %s (%d rejected)\n", written, out.c_str(), failures);
  if (static_cast<int>(written) < count) {
    std::fprintf(stderr, "retry budget exhausted: %zu of %d records written (partial file kept)\n",
                 written, count);
    return 3;
  }
  return 0;
}

int cmd_train(const std::vector<std::string>& data, const std::string& holdout,
              const std::string& profile, std::uint64_t seed, const std::string& out, int steps,
              int batch, double lr, double lr_final, const std::string& ablate) {
  sp::ShapeCatalog catalog = sp::default_catalog();
  sp::DenoiserConfig config;
  if (profile == "desk") config = sp::DenoiserConfig::desk();
  else if (profile == "paper") config = sp::DenoiserConfig::paper();
  else throw sp::ValidationError("--profile must be desk or paper");
  if (ablate == "nosdf") config.ablate_nosdf = true;
  else if (ablate == "nopose") config.ablate_nopose = true;
  else if (ablate != "none") throw sp::ValidationError("--ablate must be none, nosdf, or nopose");

  sp::LoadedDataset ds = sp::load_datasets(data, catalog, holdout);
  if (ds.scenes.empty()) throw sp::ValidationError("no training scenes left after holdout filtering");
  std::fprintf(stderr, "training on %zu scenes (%s profile, ablate=%s, holdout=%s)\n",
               ds.scenes.size(), profile.c_str(), ablate.c_str(),
               holdout.empty() ? "-" : holdout.c_str());

  sp::TrainConfig tc;
  tc.steps = steps;
  tc.batch_size = batch;
  tc.lr = lr;
  tc.lr_final = lr_final;
  tc.seed = seed;
  tc.progress = [&](int step, double loss) {
    if (step % 100 == 0 || step == steps)
      std::fprintf(stderr, "step %d/%d loss %.4f\n", step, steps, loss);
  };

  sp::TrainResult result = sp::train(config, catalog, ds.scenes, tc);

  sp::CheckpointMeta meta;
  meta.profile = profile;
  meta.seed = seed;
  meta.steps = result.steps_completed;
  meta.holdout_shape = holdout;
  for (const std::string& p : data) meta.dataset_ids.push_back(p);
  meta.catalog_hash = sp::catalog_hash(catalog);
  sp::save_checkpoint(out, result.model, meta);

  for (const auto& [step, val] : result.history.val_loss)
    std::fprintf(stderr, "val step %d loss %.4f\n", step, val);
  if (result.aborted) {
    std::fprintf(stderr, "training aborted: %s (last good model saved to %s)\n",
                 result.fault.c_str(), out.c_str());
    return 3;
  }
  std::fprintf(stderr, "saved checkpoint to %s\n", out.c_str());
  return 0;
}

int cmd_sample(const std::string& ckpt, const std::string& scene_file, int index,
               const std::string& query_shape, int n, std::uint64_t seed, const std::string& out) {
  sp::ShapeCatalog catalog = sp::default_catalog();
  sp::CheckpointMeta meta;
  sp::DenoiserModel model = sp::load_checkpoint(ckpt, &meta);
  if (meta.catalog_hash != sp::catalog_hash(catalog))
    throw sp::ValidationError("checkpoint was trained against a different catalog");
  catalog.get(query_shape);
  if (n < 0) throw sp::ValidationError("--n must be >= 0");

  std::vector<sp::SceneObject> context;
  if (!scene_file.empty()) {
    sp::LoadedDataset ds = sp::load_dataset(scene_file, catalog);
    if (index < 0 || index >= static_cast<int>(ds.scenes.size()))
      throw sp::ValidationError("--index out of range for " + scene_file);
    context = sp::strip_query(ds.scenes[static_cast<std::size_t>(index)]);
  }

  sp::SimConfig sim;
  std::string rows = "{\"format\":\"stablepose-samples\",\"version\":1,\"catalog_hash\":" +
                     nlohmann::json(sp::catalog_hash_hex(catalog)).dump() +
                     ",\"query_shape\":" + nlohmann::json(query_shape).dump() +
                     ",\"n\":" + std::to_string(n) + ",\"seed\":" + std::to_string(seed) + "}\n";
  int ok = 0, faults = 0;
  std::vector<sp::Pose> proposals;
  for (int k = 0; k < n; ++k) {
    sp::Rng rng = sp::Rng::stream(seed, static_cast<std::uint64_t>(k) + 1);
    std::string row = "{\"sample\":" + std::to_string(k);
    try {
      sp::Pose proposed = sp::sample_pose(model, catalog, context, query_shape, rng);
      proposals.push_back(proposed);
      sp::ProposalOutcome o = sp::settle_proposal(catalog, context, query_shape, proposed, sim);
      row += ",\"proposed\":" + pose_json(proposed);
      row += ",\"fault\":false";
      row += ",\"rejected\":" + std::string(o.rejected ? "true" : "false");
      row += ",\"settled\":" + (o.rejected ? std::string("null") : pose_json(o.settled.back()));
      row += ",\"scene_max_trans_pct\":" + sp::detail::format_double(o.report.scene_max_trans_pct);
      row += ",\"scene_max_rot_deg\":" + sp::detail::format_double(o.report.scene_max_rot_deg);
      row += ",\"converged\":" + std::string(o.converged ? "true" : "false");
      row += ",\"success\":" + std::string(o.success ? "true" : "false") + "}";
      ok += o.success ? 1 : 0;
      faults += o.rejected ? 1 : 0;
    } catch (const sp::SamplingFault& e) {
      ++faults;
      row += ",\"proposed\":null,\"fault\":true,\"fault_what\":" + nlohmann::json(e.what()).dump() +
             ",\"rejected\":false,\"settled\":null,\"scene_max_trans_pct\":" +
             sp::detail::format_double(sp::kFaultTransPct) +
             ",\"scene_max_rot_deg\":" + sp::detail::format_double(sp::kFaultRotDeg) +
             ",\"converged\":false,\"success\":false}";
    }
    rows += row + "\n";
  }
  sp::detail::write_text_atomic(out, rows);
  int clusters = sp::rotation_cluster_count(proposals, 15.0);
  std::fprintf(stderr, "wrote %d samples to %s: %d stable, %d failed, %d orientation clusters\n", n,
               out.c_str(), ok, faults, clusters);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& testset, const std::string& method,
             const std::string& mode, std::uint64_t seed, const std::string& out) {
  if (method != "model" && method != "random")
    throw sp::ValidationError("--method must be model or random");
  sp::baseline_mode_for(mode);  // validates the mode name

  sp::ShapeCatalog catalog = sp::default_catalog();
  sp::CheckpointMeta meta;
  sp::DenoiserModel model = sp::load_checkpoint(ckpt, &meta);
  if (meta.catalog_hash != sp::catalog_hash(catalog))
    throw sp::ValidationError("checkpoint was trained against a different catalog");
  sp::LoadedDataset ds = sp::load_dataset(testset, catalog);

  sp::EvalOptions opt;
  opt.method = method;
  opt.mode = mode;
  opt.seed = seed;
  opt.holdout_shape = meta.holdout_shape;
  std::vector<sp::EvalInstance> instances =
      sp::run_eval(method == "model" ? &model : nullptr, catalog, ds.scenes, opt,
                   [&](int done, int total) {
                     if (done % 25 == 0 || done == total)
                       std::fprintf(stderr, "evaluated %d/%d scenes\n", done, total);
                   });
  std::vector<sp::EvalAggregate> aggs = sp::compute_aggregates(instances, !meta.holdout_shape.empty());

  sp::ReportHeader hdr;
  hdr.catalog_hash = sp::catalog_hash_hex(catalog);
  hdr.method = method;
  hdr.mode = mode;
  hdr.seed = seed;
  hdr.holdout_shape = meta.holdout_shape;
  sp::write_report(out, hdr, instances, aggs);
  std::fputs(sp::render_table(hdr, instances, aggs).c_str(), stdout);
  return 0;
}

int cmd_ablate(const std::string& ckpt_full, const std::string& ckpt_nosdf,
               const std::string& ckpt_nopose, const std::string& testset, const std::string& mode,
               std::uint64_t seed, const std::string& out) {
  sp::ShapeCatalog catalog = sp::default_catalog();
  sp::CheckpointMeta meta_full, meta_nosdf, meta_nopose;
  sp::DenoiserModel full = sp::load_checkpoint(ckpt_full, &meta_full);
  sp::DenoiserModel nosdf = sp::load_checkpoint(ckpt_nosdf, &meta_nosdf);
  sp::DenoiserModel nopose = sp::load_checkpoint(ckpt_nopose, &meta_nopose);

  if (!sp::same_profile(full.config, nosdf.config) || !sp::same_profile(full.config, nopose.config))
    throw sp::ValidationError("ablation checkpoints have mismatched profiles");
  if (meta_full.seed != meta_nosdf.seed || meta_full.seed != meta_nopose.seed)
    throw sp::ValidationError("ablation checkpoints have mismatched training seeds");
  if (meta_full.catalog_hash != sp::catalog_hash(catalog) ||
      meta_nosdf.catalog_hash != meta_full.catalog_hash ||
      meta_nopose.catalog_hash != meta_full.catalog_hash)
    throw sp::ValidationError("ablation checkpoints disagree with the active catalog");
  // Slot/flag mismatches are warnings, not refusals: comparing identical
  // checkpoints across all three slots is a legitimate sanity probe.
  if (full.config.ablate_nosdf || full.config.ablate_nopose)
    std::fprintf(stderr, "warning: --ckpt-full was trained with an ablation\n");
  if (!nosdf.config.ablate_nosdf)
    std::fprintf(stderr, "warning: --ckpt-nosdf was not trained with the nosdf ablation\n");
  if (!nopose.config.ablate_nopose)
    std::fprintf(stderr, "warning: --ckpt-nopose was not trained with the nopose ablation\n");

  sp::LoadedDataset ds = sp::load_dataset(testset, catalog);
  sp::EvalOptions opt;
  opt.method = "model";
  opt.mode = mode;
  opt.seed = seed;
  opt.holdout_shape = meta_full.holdout_shape;

  auto eval_one = [&](const sp::DenoiserModel& m, const char* tag) {
    std::fprintf(stderr, "evaluating %s variant\n", tag);
    return sp::run_eval(&m, catalog, ds.scenes, opt, [&](int done, int total) {
      if (done % 50 == 0 || done == total) std::fprintf(stderr, "  %d/%d scenes\n", done, total);
    });
  };
  std::vector<sp::EvalInstance> inst_full = eval_one(full, "full");
  std::vector<sp::EvalInstance> inst_nosdf = eval_one(nosdf, "w/o-sdf");
  std::vector<sp::EvalInstance> inst_nopose = eval_one(nopose, "w/o-pose");

  std::string table =
      sp::render_ablation_table(inst_full, inst_nosdf, inst_nopose, sp::catalog_hash_hex(catalog));
  sp::detail::write_text_atomic(out, table);

  sp::ReportHeader hdr;
  hdr.catalog_hash = sp::catalog_hash_hex(catalog);
  hdr.method = "model";
  hdr.mode = mode;
  hdr.seed = seed;
  hdr.holdout_shape = meta_full.holdout_shape;
  auto rows_for = [&](const std::vector<sp::EvalInstance>& inst, const std::string& suffix) {
    sp::write_report(out + suffix, hdr, inst, sp::compute_aggregates(inst, !hdr.holdout_shape.empty()));
  };
  rows_for(inst_full, ".full");
  rows_for(inst_nosdf, ".nosdf");
  rows_for(inst_nopose, ".nopose");

  std::fputs(table.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stable-pose toolkit: datasets, diffusion training, sampling, evaluation"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate settled scene datasets");
  int gen_blocks = 1, gen_count = 10;
  std::uint64_t gen_seed = 0;
  std::string gen_out, gen_mode = "placement";
  std::vector<std::string> gen_shapes;
  gen->add_option("--blocks", gen_blocks, "blocks per scene");
  gen->add_option("--count", gen_count, "number of scenes");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_option("--mode", gen_mode, "placement | stacking");
  gen->add_option("--shapes", gen_shapes, "restrict shape draw (default: full catalog)")->delimiter(',');

  auto* train = app.add_subcommand("train", "train a denoiser on dataset unions");
  std::vector<std::string> train_data;
  std::string train_holdout, train_profile = "desk", train_out, train_ablate = "none";
  std::uint64_t train_seed = 0;
  int train_steps = 10000, train_batch = 32;
  double train_lr = 1e-4, train_lr_final = 0.0;
  train->add_option("--data", train_data, "dataset file (repeatable)")->required();
  train->add_option("--holdout-shape", train_holdout, "exclude scenes containing this shape");
  train->add_option("--profile", train_profile, "desk | paper");
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--steps", train_steps, "optimizer steps");
  train->add_option("--batch", train_batch, "scenes per step");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--lr-final", train_lr_final, "decay target (0 = constant lr)");
  train->add_option("--ablate", train_ablate, "none | nosdf | nopose");

  auto* sample = app.add_subcommand("sample", "draw poses from a checkpoint and settle them");
  std::string smp_ckpt, smp_scene, smp_query, smp_out;
  int smp_index = 0, smp_n = 1;
  std::uint64_t smp_seed = 0;
  sample->add_option("--ckpt", smp_ckpt, "checkpoint path")->required();
  sample->add_option("--scene", smp_scene, "context dataset file (omit for empty ground)");
  sample->add_option("--index", smp_index, "record index within --scene");
  sample->add_option("--query-shape", smp_query, "shape to place")->required();
  sample->add_option("--n", smp_n, "number of samples");
  sample->add_option("--seed", smp_seed, "sampling seed");
  sample->add_option("--out", smp_out, "output JSONL path")->required();

  auto* eval = app.add_subcommand("eval", "score a method over a test set");
  std::string ev_ckpt, ev_testset, ev_method = "model", ev_mode = "placement", ev_out;
  std::uint64_t ev_seed = 0;
  eval->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  eval->add_option("--testset", ev_testset, "test dataset path")->required();
  eval->add_option("--method", ev_method, "model | random");
  eval->add_option("--mode", ev_mode, "placement | stack1 | stack2");
  eval->add_option("--seed", ev_seed, "evaluation seed");
  eval->add_option("--out", ev_out, "report path (rows land at <out>.jsonl)")->required();

  auto* ablate = app.add_subcommand("ablate", "compare full / nosdf / nopose checkpoints");
  std::string ab_full, ab_nosdf, ab_nopose, ab_testset, ab_mode = "placement", ab_out;
  std::uint64_t ab_seed = 0;
  ablate->add_option("--ckpt-full", ab_full, "full-model checkpoint")->required();
  ablate->add_option("--ckpt-nosdf", ab_nosdf, "nosdf-ablated checkpoint")->required();
  ablate->add_option("--ckpt-nopose", ab_nopose, "nopose-ablated checkpoint")->required();
  ablate->add_option("--testset", ab_testset, "test dataset path")->required();
  ablate->add_option("--mode", ab_mode, "placement | stack1 | stack2");
  ablate->add_option("--seed", ab_seed, "evaluation seed");
  ablate->add_option("--out", ab_out, "comparison table path")->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_blocks, gen_count, gen_seed, gen_mode, gen_shapes);
    if (train->parsed())
      return cmd_train(train_data, train_holdout, train_profile, train_seed, train_out, train_steps,
                       train_batch, train_lr, train_lr_final, train_ablate);
    if (sample->parsed())
      return cmd_sample(smp_ckpt, smp_scene, smp_index, smp_query, smp_n, smp_seed, smp_out);
    if (eval->parsed()) return cmd_eval(ev_ckpt, ev_testset, ev_method, ev_mode, ev_seed, ev_out);
    if (ablate->parsed())
      return cmd_ablate(ab_full, ab_nosdf, ab_nopose, ab_testset, ab_mode, ab_seed, ab_out);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const sp::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const sp::SimFault& e) {
    std::fprintf(stderr, "simulation fault: %s\n", e.what());
    return 3;
  } catch (const sp::TrainFault& e) {
    std::fprintf(stderr, "training fault: %s\n", e.what());
    return 3;
  } catch (const sp::SamplingFault& e) {
    std::fprintf(stderr, "sampling fault: %s\n", e.what());
    return 3;
  }
  return 0;
}
