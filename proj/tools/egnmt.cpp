// Staged pipeline driver: one subcommand per stage, files in between.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "egnmt/checkpoint.hpp"
#include "egnmt/config.hpp"
#include "egnmt/decode.hpp"
#include "egnmt/errors.hpp"
#include "egnmt/evaluate.hpp"
#include "egnmt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace egnmt;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

void log(const std::string& msg) { std::cerr << "[egnmt] " << msg << '\n'; }

PipelineConfig resolve_config(const Common& common) {
  PipelineConfig cfg = common.config_path.empty() ? PipelineConfig{} : PipelineConfig::load(common.config_path);
  if (common.seed_given) {
    cfg.seed = common.seed;
    cfg.train.seed = common.seed;
  }
  return cfg;
}

void echo_config(const std::string& stage, const PipelineConfig& cfg) {
  std::cerr << "[egnmt] " << stage << " resolved config " << cfg.to_json().dump() << '\n';
}

void require_file(const std::string& path, const std::string& what, const std::string& producer) {
  if (path.empty()) throw InputError("missing --" + what);
  if (!fs::exists(path)) throw InputError(what + " file " + path + " not found (produced by " + producer + ")");
}

// Writes to --out atomically, or to stdout.
void emit(const Common& common, const std::string& text) {
  if (common.out.empty()) {
    std::cout << text;
    std::cout.flush();
  } else {
    write_file_atomic(common.out, text);
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// Lines of "source" or "source TAB target".
std::vector<ParallelPair> read_corpus(const std::string& path) {
  std::vector<ParallelPair> out;
  std::size_t number = 0;
  for (const auto& line : read_lines(path)) {
    ++number;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      out.push_back({split_words(line), {}});
    } else {
      if (line.find('\t', tab + 1) != std::string::npos)
        throw InputError(path + ":" + std::to_string(number) + ": more than one TAB");
      out.push_back({split_words(line.substr(0, tab)), split_words(line.substr(tab + 1))});
    }
  }
  return out;
}

std::vector<TokenSequence> read_side(const std::string& path, const std::string& column) {
  std::vector<TokenSequence> out;
  for (const auto& pair : read_corpus(path)) {
    if (column == "source") out.push_back(pair.source);
    else if (column == "target") out.push_back(pair.target);
    else throw InputError("--column must be source or target");
  }
  return out;
}

template <typename F>
std::string collect(F&& body) {
  std::ostringstream out;
  body(out);
  return out.str();
}

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "Pipeline config (canonical JSON)");
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&common](const std::uint64_t& s) {
        common.seed = s;
        common.seed_given = true;
      },
      "Random seed");
  cmd->add_option("--out", common.out, "Output file (default: stdout)");
}

std::vector<TokenSequence> tokens_of(const std::vector<ManifestRecord>& records, std::string ManifestRecord::*field) {
  std::vector<TokenSequence> out;
  for (const auto& r : records) out.push_back(split_words(r.*field));
  return out;
}

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt-%06zu.bin", step);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Example-guided NMT pipeline"};
  app.require_subcommand(1);
  Common common;

  // bpe-train
  std::string in_path, column = "source", merges_path;
  std::size_t num_merges = 0;
  auto* bpe_train_cmd = app.add_subcommand("bpe-train", "Learn BPE merges from one side of a corpus");
  add_common(bpe_train_cmd, common);
  bpe_train_cmd->add_option("--in", in_path, "Corpus (TSV or one sentence per line)")->required();
  bpe_train_cmd->add_option("--column", column, "source or target");
  bpe_train_cmd->add_option("--merges", num_merges, "Number of merges (default: config bpe.merges)");

  auto* bpe_apply_cmd = app.add_subcommand("bpe-apply", "Segment one side of a corpus with learned merges");
  add_common(bpe_apply_cmd, common);
  bpe_apply_cmd->add_option("--in", in_path, "Corpus")->required();
  bpe_apply_cmd->add_option("--column", column, "source or target");
  bpe_apply_cmd->add_option("--merges", merges_path, "Merge table from bpe-train")->required();

  std::string db_path, index_path;
  auto* index_cmd = app.add_subcommand("build-index", "Build the TF-IDF index over example sources");
  add_common(index_cmd, common);
  index_cmd->add_option("--db", db_path, "Example database TSV")->required();

  std::size_t topn = 0;
  bool exclude_self = false;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Match each query to one example");
  add_common(retrieve_cmd, common);
  retrieve_cmd->add_option("--db", db_path, "Example database TSV")->required();
  retrieve_cmd->add_option("--in", in_path, "Queries (TSV or source lines)")->required();
  retrieve_cmd->add_option("--index", index_path, "Index from build-index (built on the fly if absent)");
  retrieve_cmd->add_option("--topn", topn, "Candidates before cosine rerank (default: config retrieval.topn)");
  retrieve_cmd->add_flag("--exclude-self", exclude_self, "Query i never matches database entry i");

  std::size_t iterations = 0;
  bool no_null = false, diagonal = false;
  auto* align_train_cmd = app.add_subcommand("align-train", "Train IBM Model 1 on the example database");
  add_common(align_train_cmd, common);
  align_train_cmd->add_option("--db", db_path, "Example database TSV")->required();
  align_train_cmd->add_option("--iterations", iterations, "EM iterations (default: config)");
  align_train_cmd->add_flag("--no-null", no_null, "Disable the NULL source word");
  align_train_cmd->add_flag("--diagonal", diagonal, "Use the diagonal position prior");

  std::string ttable_path;
  auto* align_cmd = app.add_subcommand("align", "Viterbi-align every database pair");
  add_common(align_cmd, common);
  align_cmd->add_option("--db", db_path, "Example database TSV")->required();
  align_cmd->add_option("--ttable", ttable_path, "Translation table from align-train")->required();

  std::string retrieval_path, alignments_path, reference_mode;
  auto* mask_cmd = app.add_subcommand("mask", "Join retrieval and alignments and write the manifest");
  add_common(mask_cmd, common);
  mask_cmd->add_option("--in", in_path, "Corpus TSV (source TAB reference)")->required();
  mask_cmd->add_option("--db", db_path, "Example database TSV")->required();
  mask_cmd->add_option("--retrieval", retrieval_path, "Records from retrieve")->required();
  mask_cmd->add_option("--alignments", alignments_path, "Alignments from align")->required();
  mask_cmd->add_option("--reference-mode", reference_mode, "lcs or bag (default: config)");

  std::string manifest_path, variant_name, out_dir, src_merges, tgt_merges, dev_path;
  std::size_t steps = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a model variant on a manifest");
  add_common(train_cmd, common);
  train_cmd->add_option("--manifest", manifest_path, "Training manifest from mask")->required();
  train_cmd->add_option("--variant", variant_name, "baseline, basic, nme, ad or final (default: config)");
  train_cmd->add_option("--out-dir", out_dir, "Model directory")->required();
  train_cmd->add_option("--src-merges", src_merges, "Source BPE merges (words are units when absent)");
  train_cmd->add_option("--tgt-merges", tgt_merges, "Target BPE merges");
  train_cmd->add_option("--dev", dev_path, "Dev manifest for BLEU at each checkpoint");
  train_cmd->add_option("--steps", steps, "Override training.steps");

  std::string model_dir, checkpoint_path;
  std::size_t beam = 0;
  auto* translate_cmd = app.add_subcommand("translate", "Beam-search translate a manifest");
  add_common(translate_cmd, common);
  translate_cmd->add_option("--model-dir", model_dir, "Model directory from train")->required();
  translate_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint (default: MODEL_DIR/model.ckpt)");
  translate_cmd->add_option("--manifest", manifest_path, "Manifest from mask")->required();
  translate_cmd->add_option("--beam", beam, "Beam size (default: config decode.beam)");

  std::vector<std::string> hyps;
  std::string report = "table", stopwords_path;
  bool token_level = false;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "FMS-bucketed BLEU and reusable-word F1");
  add_common(evaluate_cmd, common);
  evaluate_cmd->add_option("--manifest", manifest_path, "Test manifest with references")->required();
  evaluate_cmd->add_option("--hyp", hyps, "NAME=FILE system outputs, one per line")->required();
  evaluate_cmd->add_option("--report", report, "table or json");
  evaluate_cmd->add_option("--stopwords", stopwords_path, "Stop-word file (default: built-in list)");
  evaluate_cmd->add_flag("--token-level", token_level, "Count reusable words with multiplicity");

  bool forced = false;
  std::size_t limit = 0;
  auto* attn_cmd = app.add_subcommand("attn-dump", "Dump decoder example-attention weights as NDJSON");
  add_common(attn_cmd, common);
  attn_cmd->add_option("--model-dir", model_dir, "Model directory from train")->required();
  attn_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint (default: MODEL_DIR/model.ckpt)");
  attn_cmd->add_option("--manifest", manifest_path, "Manifest from mask")->required();
  attn_cmd->add_flag("--forced", forced, "Teacher-force the reference instead of decoding");
  attn_cmd->add_option("--limit", limit, "Only the first N records");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    PipelineConfig cfg = resolve_config(common);

    if (*bpe_train_cmd) {
      echo_config("bpe-train", cfg);
      const auto merges = bpe_train(read_side(in_path, column), num_merges ? num_merges : cfg.bpe_merges);
      emit(common, collect([&](std::ostream& o) {
             for (const auto& [l, r] : merges.merges()) o << l << ' ' << r << '\n';
           }));
    } else if (*bpe_apply_cmd) {
      echo_config("bpe-apply", cfg);
      require_file(merges_path, "merges", "bpe-train");
      const auto merges = MergeTable::load(merges_path);
      emit(common, collect([&](std::ostream& o) {
             for (const auto& s : read_side(in_path, column)) o << join_words(bpe_apply(s, merges)) << '\n';
           }));
    } else if (*index_cmd) {
      echo_config("build-index", cfg);
      if (common.out.empty()) throw InputError("build-index needs --out");
      const auto index = InvertedIndex::build(ExampleDatabase::load_tsv(db_path));
      index.save(common.out + ".tmp");
      fs::rename(common.out + ".tmp", common.out);
    } else if (*retrieve_cmd) {
      if (topn) cfg.preprocess.retrieval.topn = topn;
      if (exclude_self) cfg.preprocess.retrieval.exclude_self = true;
      echo_config("retrieve", cfg);
      const auto db = ExampleDatabase::load_tsv(db_path);
      const auto index = index_path.empty() ? InvertedIndex::build(db) : InvertedIndex::load(index_path);
      if (index.num_entries() != db.size()) throw InputError("index does not match the database (rerun build-index)");
      const auto records = match_queries(read_side(in_path, "source"), db, index, cfg.preprocess.retrieval);
      emit(common, collect([&](std::ostream& o) {
             for (const auto& r : records) o << to_ndjson(r) << '\n';
           }));
    } else if (*align_train_cmd) {
      auto& a = cfg.preprocess.alignment;
      if (iterations) a.iterations = iterations;
      if (no_null) a.null_word = false;
      if (diagonal) a.diagonal_prior = true;
      echo_config("align-train", cfg);
      const auto db = ExampleDatabase::load_tsv(db_path);
      const auto table = ibm1_train(db.entries(), a);
      for (std::size_t i = 0; i < table.log_likelihood().size(); ++i)
        log("EM log-likelihood " + std::to_string(i) + ": " + std::to_string(table.log_likelihood()[i]));
      if (common.out.empty()) throw InputError("align-train needs --out");
      table.save(common.out + ".tmp");
      fs::rename(common.out + ".tmp", common.out);
    } else if (*align_cmd) {
      echo_config("align", cfg);
      require_file(ttable_path, "ttable", "align-train");
      const auto db = ExampleDatabase::load_tsv(db_path);
      const auto alignments = align_database(db, TranslationTable::load(ttable_path), cfg.preprocess.null_threshold);
      emit(common, collect([&](std::ostream& o) {
             for (const auto& al : alignments) o << al.to_string() << '\n';
           }));
    } else if (*mask_cmd) {
      if (reference_mode == "lcs") cfg.preprocess.reference_mode = ReferenceMaskMode::kLcs;
      else if (reference_mode == "bag") cfg.preprocess.reference_mode = ReferenceMaskMode::kBag;
      else if (!reference_mode.empty()) throw InputError("--reference-mode must be lcs or bag");
      echo_config("mask", cfg);
      require_file(retrieval_path, "retrieval", "retrieve");
      require_file(alignments_path, "alignments", "align");
      const auto corpus = read_corpus(in_path);
      const auto db = ExampleDatabase::load_tsv(db_path);
      std::vector<RetrievalRecord> retrieval;
      for (const auto& line : read_lines(retrieval_path))
        if (!line.empty()) retrieval.push_back(retrieval_record_from_json(line));
      for (const auto& r : retrieval)
        if (r.matched_id >= db.size()) throw InputError("retrieval refers to a different database (rerun retrieve)");
      const auto records = build_manifest(corpus, db, retrieval, load_alignments(alignments_path),
                                          cfg.preprocess.reference_mode);
      emit(common, collect([&](std::ostream& o) {
             for (const auto& r : records) o << to_ndjson(r) << '\n';
           }));
    } else if (*train_cmd) {
      if (!variant_name.empty()) cfg.model.variant = parse_variant(variant_name);
      if (steps) cfg.train.steps = steps;
      require_file(manifest_path, "manifest", "mask");
      const auto records = load_manifest(manifest_path);
      std::optional<MergeTable> sm, tm;
      if (!src_merges.empty()) sm = MergeTable::load(src_merges);
      if (!tgt_merges.empty()) tm = MergeTable::load(tgt_merges);
      const auto codec = SubwordCodec::build(records, sm, tm);
      cfg.model.src_vocab = codec.source_vocab().size();
      cfg.model.tgt_vocab = codec.target_vocab().size();
      echo_config("train", cfg);
      cfg.model.validate();

      fs::create_directories(out_dir);
      codec.save(out_dir);
      write_file_atomic(out_dir + "/config.json", cfg.to_json().dump(2) + "\n");
      std::size_t dropped = 0;
      const auto data = encode_training_data(records, codec, cfg.model.max_len, &dropped);
      if (dropped) log("skipped " + std::to_string(dropped) + " pairs longer than max_len");
      log("training " + to_string(cfg.model.variant) + " on " + std::to_string(data.size()) + " pairs");

      std::vector<ManifestRecord> dev;
      if (!dev_path.empty()) dev = load_manifest(dev_path);
      auto params = init_params<float>(cfg.model, cfg.seed);
      TrainCallbacks callbacks;
      callbacks.on_log = [](const StepLog& s) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "step %zu loss %.5f primary %.5f auxiliary %.5f lr %.3g", s.step, s.loss,
                      s.primary, s.auxiliary, s.lr);
        log(buf);
      };
      const nlohmann::json meta = {{"seed", cfg.seed}};
      callbacks.on_checkpoint = [&](std::size_t step, const ModelParams<float>& p) {
        auto m = meta;
        m["step"] = step;
        save_checkpoint(out_dir + "/" + checkpoint_name(step), cfg.model, p, m);
        if (!dev.empty()) {
          std::vector<TokenSequence> out, ref;
          for (const auto& r : dev) {
            out.push_back(codec.decode_target(greedy_decode(p, cfg.model, decoding_inputs(r, codec, cfg.model)).output()));
            ref.push_back(split_words(r.y));
          }
          log("step " + std::to_string(step) + " dev BLEU " + std::to_string(bleu(out, ref)));
        }
      };
      const auto result = train_loop(params, cfg.model, data, cfg.train, callbacks);
      auto m = meta;
      m["step"] = result.steps;
      save_checkpoint(out_dir + "/model.ckpt", cfg.model, params, m);
      log("finished after " + std::to_string(result.steps) + " steps, last loss " + std::to_string(result.last_loss));
    } else if (*translate_cmd || *attn_cmd) {
      require_file(model_dir + "/src.vocab", "model-dir", "train");
      const auto ckpt = load_checkpoint(checkpoint_path.empty() ? model_dir + "/model.ckpt" : checkpoint_path);
      const auto codec = SubwordCodec::load(model_dir);
      if (beam) cfg.decode.beam = beam;
      echo_config(*translate_cmd ? "translate" : "attn-dump", cfg);
      require_file(manifest_path, "manifest", "mask");
      auto records = load_manifest(manifest_path);
      if (limit && records.size() > limit) records.resize(limit);
      std::size_t unfinished = 0;
      const auto text = collect([&](std::ostream& o) {
        for (const auto& r : records) {
          const auto inputs = decoding_inputs(r, codec, ckpt.config);
          if (*translate_cmd) {
            const auto result = beam_search(ckpt.params, ckpt.config, inputs, cfg.decode);
            if (result.unfinished) ++unfinished;
            o << join_words(codec.decode_target(result.output())) << '\n';
            continue;
          }
          std::vector<std::int32_t> output;
          if (forced) output = codec.encode_target(split_words(r.y));
          else output = beam_search(ckpt.params, ckpt.config, inputs, cfg.decode).output();
          const auto& tv = codec.target_vocab();
          const auto& ex = uses_masked_example(ckpt.config.variant) ? *inputs.masked_example : *inputs.example;
          std::vector<std::string> example_tokens, output_tokens;
          for (auto id : ex.ids) example_tokens.push_back(tv.token(id));
          for (auto id : output) output_tokens.push_back(tv.token(id));
          output_tokens.push_back(tv.token(Vocabulary::kEos));
          o << attention_dump(ckpt.params, ckpt.config, inputs, output, example_tokens, output_tokens).to_ndjson(r.id)
            << '\n';
        }
      });
      if (unfinished) log(std::to_string(unfinished) + " sentences reached the length limit without EOS");
      emit(common, text);
    } else if (*evaluate_cmd) {
      echo_config("evaluate", cfg);
      require_file(manifest_path, "manifest", "mask");
      const auto records = load_manifest(manifest_path);
      std::vector<SystemOutputs> systems;
      for (const auto& h : hyps) {
        const auto eq = h.find('=');
        if (eq == std::string::npos) throw InputError("--hyp expects NAME=FILE, got " + h);
        SystemOutputs s{h.substr(0, eq), {}};
        require_file(h.substr(eq + 1), "hyp", "translate");
        for (const auto& line : read_lines(h.substr(eq + 1))) s.outputs.push_back(split_words(line));
        systems.push_back(std::move(s));
      }
      std::vector<double> fms;
      for (const auto& r : records) fms.push_back(r.fms);
      const auto stop = stopwords_path.empty() ? default_stopwords() : load_stopwords(stopwords_path);
      const auto rep = bucket_report(fms, tokens_of(records, &ManifestRecord::y), tokens_of(records, &ManifestRecord::ym),
                                     systems, stop, token_level);
      if (report == "table") emit(common, rep.to_text());
      else if (report == "json") emit(common, rep.to_json().dump() + "\n");
      else throw InputError("--report must be table or json");
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
