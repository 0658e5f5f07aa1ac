// ape — multi-source transformer post-editing toolkit, single binary.
// Subcommands cover the whole pipeline: BPE, vocabulary, data preparation,
// joint training, checkpoint averaging, ensemble decoding and scoring.
// Exit codes: 0 success, 1 module error, 2 usage error. Logs go to stderr,
// data only to files.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "ape/bpe.hpp"
#include "ape/checkpoint.hpp"
#include "ape/config.hpp"
#include "ape/corpus.hpp"
#include "ape/decode.hpp"
#include "ape/errors.hpp"
#include "ape/manifest.hpp"
#include "ape/metrics.hpp"
#include "ape/textio.hpp"
#include "ape/train.hpp"
#include "ape/vocab.hpp"

namespace fs = std::filesystem;
using namespace ape;

namespace {

struct Args {
  // learn-bpe / apply-bpe
  std::vector<std::string> inputs;
  std::string output;
  std::int64_t merges = 40000;
  std::string bpe_model;
  std::int64_t threshold = 50;
  std::string input;

  // build-vocab
  std::string pe_side;

  // prepare
  std::string src, mt, pe;
  std::string syn_src, syn_mt, syn_pe;
  std::int64_t upsample = 20;
  std::int64_t max_len = 256;
  std::string out_prefix;

  // train
  std::string config_path;
  std::string vocab_path;
  std::string data_prefix;
  std::string dev_prefix;
  std::string out_dir;
  std::vector<std::string> overrides;

  // average
  std::string ckpt_dir;
  std::int64_t window = 5;
  std::int64_t keep_last = 20;

  // decode
  std::string models_csv;
  std::int64_t beam = 4;
  std::int64_t max_len_margin = 50;
  int threads = 1;

  // score
  std::string metric = "both";
  std::string hyp, ref;
};

RunManifest base_manifest(const std::string& command, int argc, char** argv) {
  RunManifest m;
  m.command = command;
  for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);
  return m;
}

int run_learn_bpe(const Args& a, RunManifest manifest) {
  std::vector<std::string> lines;
  for (const auto& path : a.inputs) {
    auto part = read_lines(path);
    lines.insert(lines.end(), part.begin(), part.end());
  }
  auto model = learn_bpe(lines, static_cast<std::size_t>(a.merges));
  save_bpe(model, a.output);
  std::fprintf(stderr, "learned %zu merges over %zu lines\n", model.merges.size(), lines.size());
  manifest.outputs = {a.output, a.output + ".freq"};
  write_manifest(manifest, a.output + ".manifest.json");
  return 0;
}

int run_apply_bpe(const Args& a, RunManifest manifest) {
  auto model = load_bpe(a.bpe_model);
  auto lines = read_lines(a.input);
  std::unordered_map<std::string, std::string> cache;
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const auto& line : lines) {
    out.push_back(apply_bpe_line(line, model, a.threshold, cache));
  }
  write_lines(a.output, out);
  manifest.outputs = {a.output};
  write_manifest(manifest, a.output + ".manifest.json");
  return 0;
}

int run_build_vocab(const Args& a, RunManifest manifest) {
  std::vector<std::vector<std::string>> sides;
  for (const auto& path : a.inputs) sides.push_back(read_lines(path));
  auto pe_lines = read_lines(a.pe_side);
  std::vector<const std::vector<std::string>*> side_ptrs;
  for (const auto& s : sides) side_ptrs.push_back(&s);
  auto vocab = build_vocabulary(side_ptrs, pe_lines);
  save_vocabulary(vocab, a.output);
  std::int64_t allowed = 0;
  for (std::int32_t i = 0; i < vocab.size(); ++i) allowed += vocab.allowed(i) ? 1 : 0;
  std::fprintf(stderr, "vocabulary of %d tokens, %lld allowed in PE output\n", vocab.size(),
               static_cast<long long>(allowed));
  manifest.outputs = {a.output, a.output + ".pe_allowed"};
  write_manifest(manifest, a.output + ".manifest.json");
  return 0;
}

int run_prepare(const Args& a, RunManifest manifest) {
  auto src = read_lines(a.src);
  auto mt = read_lines(a.mt);
  auto pe = read_lines(a.pe);
  std::vector<std::string> ss, sm, sp;
  const bool has_syn = !a.syn_src.empty();
  if (has_syn) {
    if (a.syn_mt.empty() || a.syn_pe.empty()) {
      throw ConfigError("--synthetic-src requires --synthetic-mt and --synthetic-pe");
    }
    ss = read_lines(a.syn_src);
    sm = read_lines(a.syn_mt);
    sp = read_lines(a.syn_pe);
  }
  auto triples = prepare_triples(src, mt, pe, a.max_len, a.upsample, has_syn ? &ss : nullptr,
                                 has_syn ? &sm : nullptr, has_syn ? &sp : nullptr, a.src, a.mt,
                                 a.pe);
  std::vector<std::string> out_src, out_mt, out_pe;
  out_src.reserve(triples.size());
  for (auto& t : triples) {
    out_src.push_back(t.src);
    out_mt.push_back(t.mt);
    out_pe.push_back(t.pe);
  }
  write_lines(a.out_prefix + ".src", out_src);
  write_lines(a.out_prefix + ".mt", out_mt);
  write_lines(a.out_prefix + ".pe", out_pe);
  std::fprintf(stderr, "prepared %zu triples\n", triples.size());
  manifest.outputs = {a.out_prefix + ".src", a.out_prefix + ".mt", a.out_prefix + ".pe"};
  write_manifest(manifest, a.out_prefix + ".manifest.json");
  return 0;
}

std::vector<Triple> load_prefix_triples(const std::string& prefix, const Vocabulary& vocab) {
  auto src = read_lines(prefix + ".src");
  auto mt = read_lines(prefix + ".mt");
  auto pe = read_lines(prefix + ".pe");
  if (src.size() != mt.size() || src.size() != pe.size()) {
    throw DataError("line counts differ under prefix " + prefix);
  }
  std::vector<TextTriple> text;
  text.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    text.push_back({src[i], mt[i], pe[i]});
  }
  return encode_triples(text, vocab);
}

int run_train(const Args& a, RunManifest manifest) {
  RunConfig cfg;
  if (!a.config_path.empty()) cfg = parse_config_file(a.config_path);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
    apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }

  auto vocab = load_vocabulary(a.vocab_path);
  cfg.model.vocab_size = vocab.size();
  cfg.model.validate();
  cfg.train.validate();

  auto train_set = load_prefix_triples(a.data_prefix, vocab);
  std::vector<Triple> dev_set;
  if (!a.dev_prefix.empty()) dev_set = load_prefix_triples(a.dev_prefix, vocab);

  std::int64_t longest = 0;
  for (const auto& t : train_set) {
    longest = std::max<std::int64_t>(
        longest, std::max({t.src.size(), t.mt.size(), t.pe.size()}));
  }
  if (longest > cfg.model.max_positions) {
    throw ConfigError("data holds sequences of length " + std::to_string(longest) +
                      "; raise max_positions (" + std::to_string(cfg.model.max_positions) + ")");
  }

  fs::create_directories(a.out_dir);
  const std::string digest = config_digest(cfg);
  {
    std::ofstream cfg_out(fs::path(a.out_dir) / "config.resolved");
    cfg_out << serialize_config(cfg);
  }

  Model<float> model(cfg.model, vocab.pe_allowed(), init_rng(cfg.train.seed));
  CheckpointStore store(a.out_dir, cfg.train.keep_last);
  std::ofstream loss_log(fs::path(a.out_dir) / "loss.log");
  if (!loss_log) throw IoError("cannot write loss log in " + a.out_dir);

  // model geometry rides in every checkpoint so decode can rebuild the model
  const auto result = train_loop(model, train_set, dev_set, cfg.train, &store, digest, &loss_log,
                                 &std::cerr);
  // re-save the newest checkpoint metadata is already written by the loop;
  // nothing else to finalize here
  std::fprintf(stderr, "trained %lld steps", static_cast<long long>(result.steps));
  if (result.best_epoch >= 0) {
    std::fprintf(stderr, ", best dev perplexity %.4f at epoch %lld", result.best_perplexity,
                 static_cast<long long>(result.best_epoch));
  }
  std::fprintf(stderr, "\n");

  manifest.has_seed = true;
  manifest.seed = cfg.train.seed;
  manifest.config_digest = digest;
  manifest.outputs = store.retained();
  manifest.outputs.push_back((fs::path(a.out_dir) / "loss.log").string());
  if (!dev_set.empty()) manifest.outputs.push_back(store.best_path());
  write_manifest(manifest, (fs::path(a.out_dir) / "manifest.json").string());
  return 0;
}

int run_average(const Args& a, RunManifest manifest) {
  CheckpointStore store(a.ckpt_dir, a.keep_last);
  store.scan_existing();
  const auto paths = store.retained();
  auto averaged = average_checkpoints<float>(paths, a.window, a.keep_last);

  CheckpointMeta meta;
  if (!paths.empty()) meta = load_checkpoint<float>(paths.back()).second;
  const std::string prefix =
      a.out_prefix.empty() ? (fs::path(a.ckpt_dir) / "avg").string() : a.out_prefix;
  std::vector<std::string> outputs;
  for (std::size_t i = 0; i < averaged.size(); ++i) {
    const std::string path = prefix + "_" + std::to_string(i + 1) + ".bin";
    save_checkpoint(averaged[i], meta, path);
    outputs.push_back(path);
  }
  std::fprintf(stderr, "averaged %zu checkpoints into %zu models\n", paths.size(),
               averaged.size());
  manifest.outputs = outputs;
  write_manifest(manifest, prefix + ".manifest.json");
  return 0;
}

int run_decode(const Args& a, RunManifest manifest) {
  auto vocab = load_vocabulary(a.vocab_path);

  std::vector<std::string> model_paths;
  std::string cur;
  for (char c : a.models_csv) {
    if (c == ',') {
      if (!cur.empty()) model_paths.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) model_paths.push_back(cur);
  if (model_paths.empty()) throw ConfigError("--models expects a comma-separated list");

  std::vector<std::unique_ptr<Model<float>>> models;
  std::vector<const Model<float>*> model_ptrs;
  for (const auto& path : model_paths) {
    auto [params, meta] = load_checkpoint<float>(path);
    auto mcfg = model_config_from_meta(meta.extra);
    if (mcfg.vocab_size != vocab.size()) {
      throw DataError(path + ": model vocab " + std::to_string(mcfg.vocab_size) +
                      " vs vocabulary file " + std::to_string(vocab.size()));
    }
    models.push_back(std::make_unique<Model<float>>(mcfg, vocab.pe_allowed(), std::move(params)));
    model_ptrs.push_back(models.back().get());
  }

  auto src_lines = read_lines(a.src);
  auto mt_lines = read_lines(a.mt);
  DecodeOptions opts;
  opts.beam = a.beam;
  opts.max_len_margin = a.max_len_margin;
  opts.threads = a.threads;
  auto out = decode_corpus(model_ptrs, vocab, src_lines, mt_lines, opts);
  write_lines(a.output, out);
  std::fprintf(stderr, "decoded %zu sentences with %zu model(s), beam %lld\n", out.size(),
               models.size(), static_cast<long long>(a.beam));
  manifest.outputs = {a.output};
  write_manifest(manifest, a.output + ".manifest.json");
  return 0;
}

int run_score(const Args& a) {
  auto hyps = tokenize_lines(read_lines(a.hyp));
  auto refs = tokenize_lines(read_lines(a.ref));
  if (a.metric == "bleu" || a.metric == "both") {
    std::printf("%s\n", format_bleu(corpus_bleu(hyps, refs)).c_str());
  }
  if (a.metric == "ter" || a.metric == "both") {
    std::printf("%s\n", format_ter(corpus_ter(hyps, refs)).c_str());
  }
  return 0;
}

int run_compare_data(const Args& a) {
  auto mt = tokenize_lines(read_lines(a.mt));
  auto pe = tokenize_lines(read_lines(a.pe));
  std::printf("%s\n", format_bleu(corpus_bleu(mt, pe)).c_str());
  std::printf("%s\n", format_ter(corpus_ter(mt, pe)).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-source transformer toolkit for automatic post-editing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
  Args a;

  auto* learn = app.add_subcommand("learn-bpe", "learn joint BPE merges over token files");
  learn->add_option("--input", a.inputs, "input corpus files (joined)")->required();
  learn->add_option("--output", a.output, "BPE model path")->required();
  learn->add_option("--merges", a.merges, "merge operations (default 40000)");

  auto* apply = app.add_subcommand("apply-bpe", "segment a corpus with a learned BPE model");
  apply->add_option("--model", a.bpe_model, "BPE model path")->required();
  apply->add_option("--input", a.input, "corpus to segment")->required();
  apply->add_option("--output", a.output, "segmented output path")->required();
  apply->add_option("--threshold", a.threshold, "vocabulary frequency threshold (default 50)");

  auto* bv = app.add_subcommand("build-vocab", "build the shared vocabulary");
  bv->add_option("--input", a.inputs, "segmented corpus sides (all of them)")->required();
  bv->add_option("--pe", a.pe_side, "segmented PE side (decides the allowed set)")->required();
  bv->add_option("--output", a.output, "vocabulary path")->required();

  auto* prep = app.add_subcommand("prepare", "filter and up-sample training triples");
  prep->add_option("--src", a.src, "source side")->required();
  prep->add_option("--mt", a.mt, "machine-translation side")->required();
  prep->add_option("--pe", a.pe, "post-edited side")->required();
  prep->add_option("--synthetic-src", a.syn_src, "synthetic source side");
  prep->add_option("--synthetic-mt", a.syn_mt, "synthetic MT side");
  prep->add_option("--synthetic-pe", a.syn_pe, "synthetic PE side");
  prep->add_option("--upsample", a.upsample, "real-data replication factor (default 20)");
  prep->add_option("--max-len", a.max_len, "max subword tokens per side (default 256)");
  prep->add_option("--out-prefix", a.out_prefix, "output prefix (.src/.mt/.pe)")->required();

  auto* train = app.add_subcommand("train", "joint APE + de-noising training");
  train->add_option("--config", a.config_path, "key=value config file");
  train->add_option("--vocab", a.vocab_path, "vocabulary path")->required();
  train->add_option("--data", a.data_prefix, "prepared training prefix (.src/.mt/.pe)")
      ->required();
  train->add_option("--dev", a.dev_prefix, "prepared dev prefix for perplexity tracking");
  train->add_option("--out-dir", a.out_dir, "run directory for checkpoints and logs")
      ->required();
  train->add_option("--set", a.overrides, "config overrides, key=value (repeatable)");

  auto* avg = app.add_subcommand("average", "average adjacent checkpoint windows");
  avg->add_option("--ckpt-dir", a.ckpt_dir, "directory holding ckpt_*.bin")->required();
  avg->add_option("--window", a.window, "checkpoints per average (default 5)");
  avg->add_option("--keep-last", a.keep_last, "expected retained checkpoints (default 20)");
  avg->add_option("--out-prefix", a.out_prefix, "output prefix (default <ckpt-dir>/avg)");

  auto* dec = app.add_subcommand("decode", "beam-search post-editing with a model ensemble");
  dec->add_option("--models", a.models_csv, "comma-separated checkpoint paths")->required();
  dec->add_option("--vocab", a.vocab_path, "vocabulary path")->required();
  dec->add_option("--src", a.src, "source side")->required();
  dec->add_option("--mt", a.mt, "machine-translation side")->required();
  dec->add_option("--out", a.output, "decoded output path")->required();
  dec->add_option("--beam", a.beam, "beam size (default 4)");
  dec->add_option("--max-len-margin", a.max_len_margin,
                  "extra tokens over the MT length (default 50)");
  dec->add_option("--threads", a.threads, "sentence-parallel decoding threads");

  auto* score = app.add_subcommand("score", "BLEU/TER between hypothesis and reference");
  score->add_option("--metric", a.metric, "bleu, ter or both (default both)")
      ->check(CLI::IsMember({"bleu", "ter", "both"}));
  score->add_option("--hyp", a.hyp, "hypothesis file")->required();
  score->add_option("--ref", a.ref, "reference file")->required();

  auto* cmp = app.add_subcommand("compare-data", "score MT against PE (do-nothing baseline)");
  cmp->add_option("--mt", a.mt, "machine-translation side")->required();
  cmp->add_option("--pe", a.pe, "post-edited side")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (learn->parsed()) return run_learn_bpe(a, base_manifest("learn-bpe", argc, argv));
    if (apply->parsed()) return run_apply_bpe(a, base_manifest("apply-bpe", argc, argv));
    if (bv->parsed()) return run_build_vocab(a, base_manifest("build-vocab", argc, argv));
    if (prep->parsed()) return run_prepare(a, base_manifest("prepare", argc, argv));
    if (train->parsed()) return run_train(a, base_manifest("train", argc, argv));
    if (avg->parsed()) return run_average(a, base_manifest("average", argc, argv));
    if (dec->parsed()) return run_decode(a, base_manifest("decode", argc, argv));
    if (score->parsed()) return run_score(a);
    if (cmp->parsed()) return run_compare_data(a);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
