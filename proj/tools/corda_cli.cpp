#include <iostream>

#include <CLI11.hpp>

#include "corda/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Correlation-aware domain adaptation on synthetic dual-domain scenes"};
  app.require_subcommand(1);

  corda::GenDataArgs gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic source and target datasets");
  gen_cmd->add_option("--preset", gen.preset, "domain-shift preset (default, overcast, mild, none)");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--classes", gen.classes, "class count (>= 3)");
  gen_cmd->add_option("--count", gen.count, "train samples per domain");
  gen_cmd->add_option("--eval-count", gen.eval_count, "eval samples per domain");
  gen_cmd->add_option("--size", gen.size, "image height and width");

  std::string config;
  corda::TrainOverrides ov;
  std::string variant, train_out, resume;
  int iterations = 0, eval_interval = -1;
  std::uint64_t seed = 0;
  auto* train_cmd = app.add_subcommand("train", "train one variant");
  train_cmd->add_option("--config", config, "experiment config JSON")->required();
  auto* v_opt = train_cmd->add_option("--variant", variant, "baseline | simple_aux | corda_f | corda_fd");
  auto* it_opt = train_cmd->add_option("--iterations", iterations, "override iteration count");
  auto* seed_opt = train_cmd->add_option("--seed", seed, "override model and training seed");
  auto* out_opt = train_cmd->add_option("--out", train_out, "override output directory");
  auto* ev_opt = train_cmd->add_option("--eval-interval", eval_interval, "evaluate every N iterations");
  auto* res_opt = train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  corda::EvalArgs ev;
  std::string ev_ckpt, ev_target, ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a target split");
  eval_cmd->add_option("--checkpoint", ev_ckpt)->required();
  eval_cmd->add_option("--target", ev_target, "target dataset root")->required();
  eval_cmd->add_option("--split", ev.split);
  eval_cmd->add_option("--out", ev_out, "JSON report path");

  corda::InspectArgs ins;
  std::string in_ckpt, in_target, in_out;
  auto* ins_cmd = app.add_subcommand("inspect-weights", "dump pseudo-label difficulty weights as heatmaps");
  ins_cmd->add_option("--checkpoint", in_ckpt)->required();
  ins_cmd->add_option("--target", in_target, "target dataset root")->required();
  ins_cmd->add_option("--split", ins.split);
  ins_cmd->add_option("--out", in_out, "output directory")->required();
  ins_cmd->add_option("--limit", ins.limit, "maximum number of samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? corda::kExitOk : corda::kExitUsage;
  }

  if (*gen_cmd) {
    gen.out = gen_out;
    return corda::cmd_gen_data(gen);
  }
  if (*train_cmd) {
    if (*v_opt) ov.variant = variant;
    if (*it_opt) ov.iterations = iterations;
    if (*seed_opt) ov.seed = seed;
    if (*out_opt) ov.output_dir = train_out;
    if (*ev_opt) ov.eval_interval = eval_interval;
    if (*res_opt) ov.resume = resume;
    return corda::cmd_train(config, ov);
  }
  if (*eval_cmd) {
    ev.checkpoint = ev_ckpt;
    ev.target = ev_target;
    ev.out = ev_out;
    return corda::cmd_eval(ev);
  }
  ins.checkpoint = in_ckpt;
  ins.target = in_target;
  ins.out = in_out;
  return corda::cmd_inspect_weights(ins);
}
