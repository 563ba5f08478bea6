// Writes synthetic TSV corpora: a copy task for overfitting checks and a
// paraphrase task where retrieved examples carry the answer.
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "egnmt/checkpoint.hpp"
#include "egnmt/errors.hpp"
#include "egnmt/synth.hpp"

using namespace egnmt;

namespace {

std::string to_tsv(const std::vector<ParallelPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += join_words(p.source) + "\t" + join_words(p.target) + "\n";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic corpora"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  std::string out_dir;
  synth::ParaphraseOptions opt;

  auto* copy = app.add_subcommand("copy", "Copy corpus (train.tsv only)");
  copy->add_option("--seed", seed);
  copy->add_option("--out-dir", out_dir)->required();

  auto* para = app.add_subcommand("paraphrase", "Cluster paraphrase corpus (train.tsv, test.tsv, test.kind)");
  para->add_option("--seed", seed);
  para->add_option("--out-dir", out_dir)->required();
  para->add_option("--clusters", opt.clusters);
  para->add_option("--members", opt.members);
  para->add_option("--test-members", opt.test_members);
  para->add_option("--plain-train", opt.plain_train);
  para->add_option("--test-high", opt.test_high);
  para->add_option("--test-low", opt.test_low);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    std::filesystem::create_directories(out_dir);
    if (*copy) {
      write_file_atomic(out_dir + "/train.tsv", to_tsv(synth::copy_corpus(seed)));
    } else {
      const auto corpus = synth::paraphrase_corpus(opt, seed);
      write_file_atomic(out_dir + "/train.tsv", to_tsv(corpus.train));
      write_file_atomic(out_dir + "/test.tsv", to_tsv(corpus.test));
      std::string kinds;
      for (const auto& k : corpus.test_kind) kinds += k + "\n";
      write_file_atomic(out_dir + "/test.kind", kinds);
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
