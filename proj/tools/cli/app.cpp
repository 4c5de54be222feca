#include "app.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <ostream>

#include "commands.hpp"
#include "mimic/error.hpp"

namespace mimic::cli {

namespace {

int exit_code(Error::Kind kind) {
  switch (kind) {
    case Error::Kind::kConfig:
      return kExitUsage;
    case Error::Kind::kNumeric:
      return kExitNumeric;
    case Error::Kind::kContract:
      return kExitInternal;
    case Error::Kind::kDimension:
    case Error::Kind::kInput:
    case Error::Kind::kData:
    case Error::Kind::kSampling:
    case Error::Kind::kIntegrity:
    case Error::Kind::kVersion:
      return kExitData;
  }
  return kExitInternal;
}

struct Shared {
  std::string config_file;
  std::vector<std::string> overrides;

  RunConfig resolve() const {
    RunConfig c;
    if (!config_file.empty()) c.load_file(config_file);
    for (const auto& s : overrides) c.set(s);
    return c;
  }
};

void add_shared(CLI::App& cmd, Shared& shared) {
  cmd.add_option("--config", shared.config_file, "INI settings file")->check(CLI::ExistingFile);
  cmd.add_option("--set", shared.overrides, "section.key=value override (repeatable)")->take_all();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Voice-imitating text-to-speech: preprocess, train, synthesize, embed, eval", "mimic"};
  app.require_subcommand(1);
  Shared shared;

  auto* pre = app.add_subcommand("preprocess", "trim audio, extract features, build the reference pool");
  PreprocessOptions pre_opts;
  pre->add_option("--manifest", pre_opts.manifest, "audio_path<TAB>speaker<TAB>transcript file")
      ->required()
      ->check(CLI::ExistingFile);
  pre->add_option("--out", pre_opts.out, "feature directory")->required();
  pre->add_option("--threads", pre_opts.threads, "worker threads (0 = all cores)");
  add_shared(*pre, shared);

  auto* train = app.add_subcommand("train", "train a model on a feature directory");
  TrainOptions train_opts;
  std::string mode;
  std::optional<std::uint64_t> train_seed;
  std::string resume;
  train->add_option("--features", train_opts.features, "preprocessed feature directory")->required();
  train->add_option("--out", train_opts.out, "run directory")->required();
  train->add_option("--mode", mode, "embedder or lookup")->check(CLI::IsMember({"embedder", "lookup"}));
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--steps", train_opts.until_step, "stop after this global step (default train.max_steps)");
  train->add_option("--seed", train_seed, "training seed");
  add_shared(*train, shared);

  auto* synth = app.add_subcommand("synthesize", "speak text in the voice of a reference or a trained speaker");
  SynthesizeOptions synth_opts;
  std::string ref;
  std::string speaker;
  synth->add_option("--checkpoint", synth_opts.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  synth->add_option("--text", synth_opts.text, "text to speak")->required();
  auto* ref_opt = synth->add_option("--ref", ref, "reference recording (embedder mode)")->check(CLI::ExistingFile);
  auto* speaker_opt = synth->add_option("--speaker", speaker, "trained speaker id (lookup mode)");
  ref_opt->excludes(speaker_opt);
  synth->add_option("--out", synth_opts.out, "output directory")->required();
  synth->add_option("--seed", synth_opts.seed, "Griffin-Lim phase seed (0 = zero phase)");

  auto* embed = app.add_subcommand("embed", "embed every pool window of a feature directory");
  EmbedOptions embed_opts;
  embed->add_option("--checkpoint", embed_opts.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  embed->add_option("--features", embed_opts.features, "preprocessed feature directory")->required();
  embed->add_option("--out", embed_opts.out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "embedding analyses and generated-vs-ground-truth comparison");
  EvalOptions eval_opts;
  std::string speaker_info;
  std::string text;
  std::optional<std::size_t> trials;
  std::optional<std::string> distance;
  std::optional<std::uint64_t> eval_seed;
  eval->add_option("--checkpoint", eval_opts.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--features", eval_opts.features, "preprocessed feature directory")->required();
  eval->add_option("--out", eval_opts.out, "output directory")->required();
  auto* pca_flag = eval->add_flag("--pca", "project embeddings on their principal components");
  auto* disc_flag = eval->add_flag("--discriminability", "same-vs-different speaker trials");
  auto* compare_opt = eval->add_option("--compare", eval_opts.utterance, "utterance id to regenerate");
  pca_flag->excludes(disc_flag)->excludes(compare_opt);
  disc_flag->excludes(compare_opt);
  eval->add_option("--speaker-info", speaker_info, "speaker<TAB>gender file for --pca")->check(CLI::ExistingFile);
  eval->add_option("--text", text, "text for --compare (default: the utterance transcript)");
  eval->add_option("--trials", trials, "number of discriminability trials");
  eval->add_option("--distance", distance, "cosine or euclidean")->check(CLI::IsMember({"cosine", "euclidean"}));
  eval->add_option("--seed", eval_seed, "trial and reference-draw seed");
  add_shared(*eval, shared);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostream& stream = e.get_exit_code() == 0 ? out : err;
    return app.exit(e, stream, stream) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*pre) {
      const PreprocessReport r = cmd_preprocess(shared.resolve(), pre_opts);
      out << "preprocessed " << r.computed + r.reused << " of " << r.total << " utterances (" << r.computed
          << " computed, " << r.reused << " reused, " << r.skipped.size() << " skipped)\n";
      for (const auto& [id, reason] : r.skipped) err << "skipped " << id << ": " << reason << '\n';
    } else if (*train) {
      RunConfig config = shared.resolve();
      if (!mode.empty()) config.set("train", "mode", mode);
      if (train_seed) config.train.seed = *train_seed;
      if (!resume.empty()) train_opts.resume = resume;
      const TrainReport r = cmd_train(config, train_opts);
      out << "trained to step " << r.steps << "; final checkpoint " << r.final_checkpoint.string() << '\n';
    } else if (*synth) {
      if (!ref.empty()) synth_opts.reference = ref;
      if (!speaker.empty()) synth_opts.speaker = speaker;
      const ComparisonBundle b = cmd_synthesize(synth_opts);
      out << "wrote " << b.files.at("audio").string() << " (" << b.synthesis.steps << " decoder steps"
          << (b.synthesis.truncated ? ", truncated" : "") << ")\n";
    } else if (*embed) {
      const EmbeddingSet set = cmd_embed(embed_opts);
      out << "wrote " << set.size() << " embeddings of dimension " << set.dim << '\n';
    } else if (*eval) {
      RunConfig config = shared.resolve();
      if (trials) config.eval.trials = *trials;
      if (distance) config.eval.distance = *distance;
      if (eval_seed) config.eval.seed = *eval_seed;
      if (*pca_flag) {
        eval_opts.analysis = EvalAnalysis::kPca;
      } else if (*disc_flag) {
        eval_opts.analysis = EvalAnalysis::kDiscriminability;
      } else if (*compare_opt) {
        eval_opts.analysis = EvalAnalysis::kCompare;
      } else {
        throw ConfigError("eval needs one of --pca, --discriminability or --compare");
      }
      if (!speaker_info.empty()) eval_opts.speaker_info = speaker_info;
      if (!text.empty()) eval_opts.text = text;
      const EvalReport r = cmd_eval(config, eval_opts);
      if (r.discriminability) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f", r.discriminability->accuracy);
        out << "discriminability " << buf << " over " << r.discriminability->trials << " trials\n";
      }
      if (r.monotonic_fraction) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f", *r.monotonic_fraction);
        out << "teacher-forced monotonic alignment fraction " << buf << '\n';
      }
      for (const auto& f : r.files) out << "wrote " << f.string() << '\n';
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace mimic::cli
