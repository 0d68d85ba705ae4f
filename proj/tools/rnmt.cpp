// Command-line front end: ASR/reference alignment, WER filtering, synthetic
// noise, adversarial NMT training, translation, BLEU evaluation and report
// emission.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "rnmt/align.hpp"
#include "rnmt/bleu.hpp"
#include "rnmt/checkpoint.hpp"
#include "rnmt/noise.hpp"
#include "rnmt/text.hpp"
#include "rnmt/training.hpp"

namespace {

using namespace rnmt;

// Documents are separated by blank lines. Each auto-side document is a free
// token stream; each refs-side document holds one sentence per line.
std::vector<std::vector<std::string>> split_documents(
    const std::vector<std::string>& lines) {
  std::vector<std::vector<std::string>> docs;
  std::vector<std::string> cur;
  for (const auto& line : lines) {
    if (strip(line).empty()) {
      if (!cur.empty()) docs.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(line);
    }
  }
  if (!cur.empty()) docs.push_back(std::move(cur));
  return docs;
}

std::string format_wer(double w) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << w;
  return os.str();
}

int cmd_align(const std::string& auto_path, const std::string& refs_path,
              const std::string& out_path) {
  auto auto_docs = split_documents(read_lines(auto_path));
  auto ref_docs = split_documents(read_lines(refs_path));
  if (auto_docs.size() != ref_docs.size())
    throw std::runtime_error("document count mismatch: " +
                             std::to_string(auto_docs.size()) + " vs " +
                             std::to_string(ref_docs.size()));

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  std::size_t dropped_empty = 0, emitted = 0;
  for (std::size_t d = 0; d < auto_docs.size(); ++d) {
    Sentence stream;
    for (const auto& line : auto_docs[d]) {
      Sentence toks = tokenize(line, TokenizeMode::AsrLike);
      stream.insert(stream.end(), toks.begin(), toks.end());
    }
    std::vector<Sentence> refs;
    for (const auto& line : ref_docs[d]) {
      Sentence s = tokenize(line, TokenizeMode::AsrLike);
      if (!s.empty()) refs.push_back(std::move(s));
    }
    if (refs.empty()) continue;

    SegmentedTranscript seg = resegment(stream, refs);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (seg.segments[i].empty()) {
        ++dropped_empty;
        continue;
      }
      double w = wer(seg.segments[i], refs[i]);
      out << join_tokens(seg.segments[i]) << '\t' << join_tokens(refs[i])
          << '\t' << format_wer(w) << '\n';
      ++emitted;
    }
  }
  std::cerr << "aligned " << emitted << " pairs, dropped " << dropped_empty
            << " with empty automatic side\n";
  return 0;
}

std::vector<TranscriptionPair> load_pairs(const std::string& path) {
  std::vector<TranscriptionPair> pairs;
  for (const auto& line : read_lines(path)) {
    if (strip(line).empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw std::runtime_error("malformed pair record: " + line);
    TranscriptionPair p;
    p.auto_side = tokenize(fields[0], TokenizeMode::Clean);
    p.manual_side = tokenize(fields[1], TokenizeMode::Clean);
    p.wer = std::stod(fields[2]);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

int cmd_filter(const std::string& pairs_path, double drop_fraction,
               const std::string& out_path) {
  auto pairs = load_pairs(pairs_path);
  auto kept = filter_by_wer(pairs, drop_fraction);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  for (const auto& p : kept)
    out << join_tokens(p.auto_side) << '\t' << join_tokens(p.manual_side)
        << '\t' << format_wer(p.wer) << '\n';
  std::cerr << "kept " << kept.size() << " of " << pairs.size() << " pairs\n";
  return 0;
}

NoiseConfig noise_config_from_kv(const KvConfig& kv,
                                 const std::vector<Sentence>& corpus) {
  NoiseConfig cfg;
  auto get = [&](const char* key, double dflt) {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : std::stod(it->second);
  };
  cfg.p_delete = get("p_delete", 0.0);
  cfg.p_repeat = get("p_repeat", 0.0);
  cfg.p_substitute = get("p_substitute", 0.0);
  cfg.p_insert = get("p_insert", 0.0);
  if (auto it = kv.find("seed"); it != kv.end())
    cfg.seed = std::stoull(it->second);
  cfg.validate();

  std::vector<std::string> vocab_tokens;
  {
    std::map<std::string, int> seen;
    for (const auto& s : corpus)
      for (const auto& t : s) seen.emplace(t, 1);
    for (const auto& [t, one] : seen) vocab_tokens.push_back(t);
  }
  cfg.substitute_pool = vocab_tokens;
  auto it = kv.find("confusion");
  if (it == kv.end() || it->second == "edit1")
    cfg.confusion_table = build_confusion_table(vocab_tokens);
  // confusion = none leaves the table empty; substitutions fall back to a
  // uniform vocabulary draw
  return cfg;
}

int cmd_make_noise(const std::string& in_path, const std::string& config_path,
                   const std::string& out_path, std::uint64_t seed_override,
                   bool has_seed) {
  auto corpus = load_corpus(in_path, TokenizeMode::Clean);
  NoiseConfig cfg = noise_config_from_kv(load_kv(config_path), corpus);
  if (has_seed) cfg.seed = seed_override;

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  long edits = 0, ref_tokens = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Sentence noisy = corrupt(corpus[i], cfg, i);
    out << join_tokens(noisy) << '\n';
    edits += edit_distance_align(noisy, corpus[i]).cost;
    ref_tokens += static_cast<long>(corpus[i].size());
  }
  double empirical = ref_tokens ? static_cast<double>(edits) / ref_tokens : 0.0;
  std::cout << "empirical_wer\t" << format_wer(empirical) << '\n';
  return 0;
}

struct TrainSetup {
  ModelConfig model;
  TrainingConfig training;
  std::string parallel_src, parallel_tgt, transcripts, run_dir;
  std::string init_checkpoint;
  std::size_t vocab_max_size = 10000;
  std::size_t vocab_min_freq = 1;
};

TrainSetup train_setup_from_kv(const KvConfig& kv) {
  TrainSetup s;
  auto str = [&](const char* k, const std::string& dflt = "") {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : it->second;
  };
  auto num = [&](const char* k, double dflt) {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : std::stod(it->second);
  };
  s.parallel_src = str("parallel_src");
  s.parallel_tgt = str("parallel_tgt");
  s.transcripts = str("transcripts");
  s.run_dir = str("run_dir", "run");
  s.init_checkpoint = str("init_checkpoint");
  if (s.parallel_src.empty() || s.parallel_tgt.empty())
    throw std::runtime_error("config must set parallel_src and parallel_tgt");

  s.model.num_layers = static_cast<int>(num("num_layers", 2));
  s.model.d_model = static_cast<int>(num("d_model", 128));
  s.model.ffn_size = static_cast<int>(num("ffn_size", 256));
  s.model.num_heads = static_cast<int>(num("num_heads", 4));
  s.model.dropout = num("dropout", 0.1);
  s.model.max_positions = static_cast<int>(num("max_positions", 256));
  s.model.label_smoothing = num("label_smoothing", 0.1);

  s.training.steps = static_cast<std::uint64_t>(num("steps", 100));
  s.training.batch_parallel = static_cast<int>(num("batch_parallel", 16));
  s.training.batch_transcript = static_cast<int>(num("batch_transcript", 16));
  s.training.seed = static_cast<std::uint64_t>(num("seed", 1));
  s.training.lr_scale = num("lr_scale", 2.0);
  s.training.warmup_steps = static_cast<int>(num("warmup_steps", 400));
  s.training.checkpoint_every =
      static_cast<std::uint64_t>(num("checkpoint_every", 0));
  s.training.weights.alpha = num("alpha", 0.0);
  s.training.weights.beta = num("beta", 0.0);
  s.training.gaussian_sigma = num("gaussian_sigma", 0.0);
  s.training.max_decode_len = static_cast<int>(num("max_decode_len", 64));
  s.vocab_max_size = static_cast<std::size_t>(num("vocab_max_size", 10000));
  s.vocab_min_freq = static_cast<std::size_t>(num("vocab_min_freq", 1));
  return s;
}

int cmd_train(const std::string& config_path, const KvConfig& overrides) {
  KvConfig kv = load_kv(config_path);
  for (const auto& [k, v] : overrides) kv[k] = v;
  TrainSetup s = train_setup_from_kv(kv);

  auto src_corpus = load_corpus(s.parallel_src, TokenizeMode::Clean, true);
  auto tgt_corpus = load_corpus(s.parallel_tgt, TokenizeMode::Clean, true);
  if (src_corpus.size() != tgt_corpus.size())
    throw std::runtime_error("parallel corpora line counts differ");

  std::vector<ParallelPair> pairs;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < src_corpus.size(); ++i) {
    if (!clean_pair_keep(src_corpus[i].size(), tgt_corpus[i].size())) {
      ++dropped;
      continue;
    }
    pairs.push_back({src_corpus[i], tgt_corpus[i]});
  }
  if (pairs.empty()) throw std::runtime_error("no parallel pairs survive cleaning");
  std::cerr << "parallel pairs: " << pairs.size() << " (dropped " << dropped
            << ")\n";

  std::vector<TranscriptionPair> trans;
  if (!s.transcripts.empty()) trans = load_pairs(s.transcripts);

  // shared source-side vocabulary over clean sources and both transcript sides
  std::vector<Sentence> src_vocab_corpus;
  for (const auto& p : pairs) src_vocab_corpus.push_back(p.source);
  for (const auto& t : trans) {
    src_vocab_corpus.push_back(t.auto_side);
    src_vocab_corpus.push_back(t.manual_side);
  }
  Vocabulary src_vocab =
      build_vocab(src_vocab_corpus, s.vocab_min_freq, s.vocab_max_size);
  std::vector<Sentence> tgt_vocab_corpus;
  for (const auto& p : pairs) tgt_vocab_corpus.push_back(p.target);
  Vocabulary tgt_vocab =
      build_vocab(tgt_vocab_corpus, s.vocab_min_freq, s.vocab_max_size);

  s.model.src_vocab = src_vocab.size();
  s.model.tgt_vocab = tgt_vocab.size();
  s.model.validate();

  Corpora corpora;
  for (const auto& p : pairs)
    corpora.parallel.push_back(encode_parallel(p, src_vocab, tgt_vocab));
  for (const auto& t : trans) {
    if (t.auto_side.empty() || t.manual_side.empty()) continue;
    EncodedTranscription e;
    e.auto_ids = encode_ids(t.auto_side, src_vocab);
    e.manual_ids = encode_ids(t.manual_side, src_vocab);
    corpora.transcriptions.push_back(std::move(e));
  }

  std::filesystem::create_directories(s.run_dir);
  src_vocab.save(s.run_dir + "/src.vocab");
  tgt_vocab.save(s.run_dir + "/tgt.vocab");
  {  // echo the effective configuration verbatim
    std::ofstream echo(s.run_dir + "/config.echo");
    for (const auto& [k, v] : kv) echo << k << " = " << v << '\n';
  }

  TransformerModel model(s.model, s.training.seed);
  AdamOptimizer opt(s.training.lr_scale, s.model.d_model,
                    s.training.warmup_steps);
  if (!s.init_checkpoint.empty()) {
    Checkpoint base = Checkpoint::load(s.init_checkpoint);
    init_from_baseline(model, base);
  }

  train(model, opt, corpora, s.training, s.run_dir, &std::cerr);
  std::cout << "trained " << s.training.steps << " steps; checkpoints in "
            << s.run_dir << '\n';
  return 0;
}

int cmd_translate(const std::string& ckpt_path, const std::string& in_path,
                  const std::string& out_path, int max_len,
                  const std::string& src_vocab_path,
                  const std::string& tgt_vocab_path) {
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  Vocabulary src_vocab = Vocabulary::load(src_vocab_path);
  Vocabulary tgt_vocab = Vocabulary::load(tgt_vocab_path);
  if (src_vocab.size() != ckpt.config.src_vocab ||
      tgt_vocab.size() != ckpt.config.tgt_vocab)
    throw std::runtime_error("vocabulary size does not match checkpoint");

  TransformerModel model(ckpt.config, 0);
  init_from_baseline(model, ckpt);

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  for (const auto& line : read_lines(in_path)) {
    Sentence s = tokenize(line, TokenizeMode::Clean);
    if (s.empty()) {
      out << '\n';
      continue;
    }
    std::vector<int> ids = encode_ids(s, src_vocab);
    std::vector<int> hyp = model.translate_ids(ids, max_len);
    out << join_tokens(decode_ids(hyp, tgt_vocab)) << '\n';
  }
  return 0;
}

int cmd_evaluate(const std::string& cand_path, const std::string& ref_path,
                 bool smooth, const std::string& report_path,
                 std::uint64_t step, const std::string& condition,
                 double alpha, double beta) {
  auto cands = load_corpus(cand_path, TokenizeMode::Clean, true);
  auto refs = load_corpus(ref_path, TokenizeMode::Clean, true);
  BleuScore s = bleu(cands, refs, 4, smooth);
  std::cout << std::fixed << std::setprecision(2) << "BLEU = " << s.score
            << "  (p1 " << std::setprecision(3) << s.precisions[0] << ", p2 "
            << s.precisions[1] << ", p3 " << s.precisions[2] << ", p4 "
            << s.precisions[3] << ", BP " << s.brevity_penalty << ")\n";
  if (!report_path.empty()) {
    std::ofstream rep(report_path, std::ios::app);
    if (!rep) throw std::runtime_error("cannot write " + report_path);
    rep << step << '\t' << std::setprecision(4) << s.score << '\t' << condition
        << '\t' << alpha << '\t' << beta << '\n';
  }
  return 0;
}

int cmd_report(const std::string& evals_path, const std::string& out_path,
               const std::string& losses_path,
               const std::string& loss_out_path) {
  struct Row {
    std::uint64_t step;
    double bleu, alpha, beta;
    std::string condition;
  };
  std::vector<Row> rows;
  if (!evals_path.empty()) {
    std::ifstream f(evals_path);
    if (f) {
      std::string line;
      while (std::getline(f, line)) {
        if (strip(line).empty()) continue;
        auto fields = split_tabs(line);
        if (fields.size() != 5)
          throw std::runtime_error("malformed eval record: " + line);
        rows.push_back({std::stoull(fields[0]), std::stod(fields[1]),
                        std::stod(fields[3]), std::stod(fields[4]),
                        fields[2]});
      }
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.alpha != b.alpha) return a.alpha < b.alpha;
    if (a.beta != b.beta) return a.beta < b.beta;
    if (a.condition != b.condition) return a.condition < b.condition;
    return a.step < b.step;
  });
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << "step\tbleu\tcondition\talpha\tbeta\n";
  for (const auto& r : rows)
    out << r.step << '\t' << r.bleu << '\t' << r.condition << '\t' << r.alpha
        << '\t' << r.beta << '\n';

  if (!losses_path.empty() && !loss_out_path.empty()) {
    auto lines = read_lines(losses_path);
    write_lines(loss_out_path, lines);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust NMT training toolkit"};
  app.require_subcommand(1);

  std::string auto_path, refs_path, out_path, pairs_path, in_path, config_path;
  std::string ckpt_path, src_vocab_path, tgt_vocab_path, cand_path, ref_path;
  std::string report_path, condition = "clean", evals_path, losses_path,
              loss_out_path;
  double drop_fraction = 0.001, alpha = 0.0, beta = 0.0;
  std::uint64_t seed = 0, step = 0;
  bool smooth = false;
  int max_len = 64;
  KvConfig overrides;

  auto* align_cmd = app.add_subcommand("align", "re-segment ASR output");
  align_cmd->add_option("--auto", auto_path)->required();
  align_cmd->add_option("--refs", refs_path)->required();
  align_cmd->add_option("--out", out_path)->required();

  auto* filter_cmd = app.add_subcommand("filter", "drop worst-WER pairs");
  filter_cmd->add_option("--pairs", pairs_path)->required();
  filter_cmd->add_option("--drop-fraction", drop_fraction);
  filter_cmd->add_option("--out", out_path)->required();

  auto* noise_cmd = app.add_subcommand("make-noise", "corrupt a corpus");
  noise_cmd->add_option("--in", in_path)->required();
  noise_cmd->add_option("--config", config_path)->required();
  noise_cmd->add_option("--out", out_path)->required();
  auto* noise_seed = noise_cmd->add_option("--seed", seed);

  auto* train_cmd = app.add_subcommand("train", "run the training loop");
  train_cmd->add_option("--config", config_path)->required();
  auto* t_seed = train_cmd->add_option("--seed", seed);
  auto* t_alpha = train_cmd->add_option("--alpha", alpha);
  auto* t_beta = train_cmd->add_option("--beta", beta);

  auto* translate_cmd = app.add_subcommand("translate", "greedy decoding");
  translate_cmd->add_option("--ckpt", ckpt_path)->required();
  translate_cmd->add_option("--in", in_path)->required();
  translate_cmd->add_option("--out", out_path)->required();
  translate_cmd->add_option("--max-len", max_len);
  translate_cmd->add_option("--src-vocab", src_vocab_path)->required();
  translate_cmd->add_option("--tgt-vocab", tgt_vocab_path)->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "corpus BLEU");
  eval_cmd->add_option("--candidates", cand_path)->required();
  eval_cmd->add_option("--references", ref_path)->required();
  eval_cmd->add_flag("--smooth", smooth);
  eval_cmd->add_option("--append-report", report_path);
  eval_cmd->add_option("--step", step);
  eval_cmd->add_option("--condition", condition)
      ->check(CLI::IsMember({"clean", "noisy"}));
  eval_cmd->add_option("--alpha", alpha);
  eval_cmd->add_option("--beta", beta);

  auto* report_cmd = app.add_subcommand("report", "emit curve files");
  report_cmd->add_option("--evals", evals_path);
  report_cmd->add_option("--out", out_path)->required();
  report_cmd->add_option("--losses", losses_path);
  report_cmd->add_option("--loss-out", loss_out_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*align_cmd) return cmd_align(auto_path, refs_path, out_path);
    if (*filter_cmd) return cmd_filter(pairs_path, drop_fraction, out_path);
    if (*noise_cmd)
      return cmd_make_noise(in_path, config_path, out_path, seed,
                            noise_seed->count() > 0);
    if (*train_cmd) {
      if (t_seed->count()) overrides["seed"] = std::to_string(seed);
      if (t_alpha->count()) overrides["alpha"] = std::to_string(alpha);
      if (t_beta->count()) overrides["beta"] = std::to_string(beta);
      return cmd_train(config_path, overrides);
    }
    if (*translate_cmd)
      return cmd_translate(ckpt_path, in_path, out_path, max_len,
                           src_vocab_path, tgt_vocab_path);
    if (*eval_cmd)
      return cmd_evaluate(cand_path, ref_path, smooth, report_path, step,
                          condition, alpha, beta);
    if (*report_cmd)
      return cmd_report(evals_path, out_path, losses_path, loss_out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
