#include "egnmt/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "egnmt/errors.hpp"

namespace egnmt {

nlohmann::json ManifestRecord::to_json() const {
  return {{"id", id}, {"x", x},     {"y", y},     {"xm", xm},         {"ym", ym},         {"mxm", mxm},
          {"mym", mym}, {"my", my}, {"fms", fms}, {"cosine", cosine}, {"matched_id", matched_id},
          {"version", kManifestVersion}};
}

ManifestRecord ManifestRecord::from_json(const nlohmann::json& j) {
  const int version = j.value("version", 0);
  if (version != kManifestVersion)
    throw InputError("manifest record version " + std::to_string(version) + ", expected " +
                     std::to_string(kManifestVersion) + " (rerun the mask stage)");
  ManifestRecord r;
  r.id = j.at("id").get<std::size_t>();
  r.x = j.at("x").get<std::string>();
  r.y = j.value("y", "");
  r.xm = j.at("xm").get<std::string>();
  r.ym = j.at("ym").get<std::string>();
  r.mxm = j.at("mxm").get<std::string>();
  r.mym = j.at("mym").get<std::string>();
  r.my = j.value("my", "");
  r.fms = j.at("fms").get<double>();
  r.cosine = j.value("cosine", 0.0);
  r.matched_id = j.at("matched_id").get<std::size_t>();
  return r;
}

std::string to_ndjson(const ManifestRecord& record) { return record.to_json().dump(); }

std::vector<ManifestRecord> load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read manifest " + path + " (produced by mask)");
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(ManifestRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

void save_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write manifest " + path);
  for (const auto& r : records) out << to_ndjson(r) << '\n';
}

std::vector<Alignment> align_database(const ExampleDatabase& db, const TranslationTable& table,
                                      double null_threshold) {
  std::vector<Alignment> out;
  out.reserve(db.size());
  for (const auto& pair : db.entries()) out.push_back(viterbi_align(pair.source, pair.target, table, null_threshold));
  return out;
}

std::vector<ManifestRecord> build_manifest(const std::vector<ParallelPair>& corpus, const ExampleDatabase& db,
                                           const std::vector<RetrievalRecord>& retrieval,
                                           const std::vector<Alignment>& alignments, ReferenceMaskMode mode) {
  if (retrieval.size() != corpus.size())
    throw InputError("retrieval has " + std::to_string(retrieval.size()) + " records for " +
                     std::to_string(corpus.size()) + " sentences (rerun retrieve on this corpus)");
  if (alignments.size() != db.size())
    throw InputError("alignments cover " + std::to_string(alignments.size()) + " pairs, database has " +
                     std::to_string(db.size()) + " (rerun align on this database)");
  std::vector<ManifestRecord> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& rec = retrieval[i];
    if (rec.query_id != i) throw InputError("retrieval records are out of order at line " + std::to_string(i + 1));
    const auto& pair = corpus[i];
    const auto& example = db.at(rec.matched_id);
    const auto mxm = mask_source(pair.source, example.source);
    const auto mym = mask_example(mxm, example.target, alignments[rec.matched_id]);
    ManifestRecord r;
    r.id = i;
    r.x = join_words(pair.source);
    r.y = join_words(pair.target);
    r.xm = join_words(example.source);
    r.ym = join_words(example.target);
    r.mxm = join_words(mxm.tokens);
    r.mym = join_words(mym.tokens);
    r.my = join_words(mask_reference(pair.target, example.target, mode).tokens);
    r.fms = rec.fms;
    r.cosine = rec.cosine;
    r.matched_id = rec.matched_id;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ManifestRecord> prepare_manifest(const std::vector<ParallelPair>& corpus, const ExampleDatabase& db,
                                             const ManifestOptions& options) {
  const auto index = InvertedIndex::build(db);
  std::vector<TokenSequence> queries;
  for (const auto& p : corpus) queries.push_back(p.source);
  const auto retrieval = match_queries(queries, db, index, options.retrieval);
  const auto table = ibm1_train(db.entries(), options.alignment);
  const auto alignments = align_database(db, table, options.null_threshold);
  return build_manifest(corpus, db, retrieval, alignments, options.reference_mode);
}

namespace {

TokenSequence units(const TokenSequence& words, const std::optional<MergeTable>& merges) {
  return merges ? bpe_apply(words, *merges) : words;
}

void append_eos(std::vector<std::int32_t>& ids) { ids.push_back(Vocabulary::kEos); }

}  // namespace

SubwordCodec SubwordCodec::build(const std::vector<ManifestRecord>& records, std::optional<MergeTable> source_merges,
                                 std::optional<MergeTable> target_merges) {
  std::vector<TokenSequence> src, tgt;
  for (const auto& r : records) {
    src.push_back(units(split_words(r.x), source_merges));
    for (const auto* s : {&r.y, &r.ym, &r.mym, &r.my}) tgt.push_back(units(split_words(*s), target_merges));
  }
  auto sv = Vocabulary::build(src);
  auto tv = Vocabulary::build(tgt);
  return SubwordCodec(std::move(source_merges), std::move(target_merges), std::move(sv), std::move(tv));
}

TokenSequence SubwordCodec::source_units(const TokenSequence& words) const { return units(words, source_merges_); }
TokenSequence SubwordCodec::target_units(const TokenSequence& words) const { return units(words, target_merges_); }

std::vector<std::int32_t> SubwordCodec::encode_source(const TokenSequence& words) const {
  return source_vocab_.encode(source_units(words));
}

std::vector<std::int32_t> SubwordCodec::encode_target(const TokenSequence& words) const {
  return target_vocab_.encode(target_units(words));
}

TokenSequence SubwordCodec::decode_target(const std::vector<std::int32_t>& ids) const {
  auto tokens = target_vocab_.decode(ids, true);
  return target_merges_ ? bpe_join(tokens) : tokens;
}

void SubwordCodec::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  source_vocab_.save(dir + "/src.vocab");
  target_vocab_.save(dir + "/tgt.vocab");
  if (source_merges_) source_merges_->save(dir + "/src.bpe");
  if (target_merges_) target_merges_->save(dir + "/tgt.bpe");
}

SubwordCodec SubwordCodec::load(const std::string& dir) {
  auto optional_merges = [&](const std::string& path) -> std::optional<MergeTable> {
    if (!std::filesystem::exists(path)) return std::nullopt;
    return MergeTable::load(path);
  };
  return SubwordCodec(optional_merges(dir + "/src.bpe"), optional_merges(dir + "/tgt.bpe"),
                      Vocabulary::load(dir + "/src.vocab"), Vocabulary::load(dir + "/tgt.vocab"));
}

EncodedPair encode_record(const ManifestRecord& r, const SubwordCodec& codec) {
  EncodedPair p;
  p.source = codec.encode_source(split_words(r.x));
  append_eos(p.source);
  p.example = codec.encode_target(split_words(r.ym));
  append_eos(p.example);
  const auto mym = split_words(r.mym);
  if (!mym.empty() && mym.size() != split_words(r.ym).size())
    throw InputError("record " + std::to_string(r.id) + ": M(y^m) and y^m differ in length");
  if (!mym.empty() || split_words(r.ym).empty()) {
    p.masked_example = codec.encode_target(mym);
    append_eos(p.masked_example);
  }
  p.target = codec.encode_target(split_words(r.y));
  p.masked_target = codec.encode_target(split_words(r.my));
  p.fms = r.fms;
  return p;
}

std::vector<EncodedPair> encode_training_data(const std::vector<ManifestRecord>& records, const SubwordCodec& codec,
                                              std::size_t max_len, std::size_t* dropped) {
  std::vector<EncodedPair> out;
  std::size_t skipped = 0;
  for (const auto& r : records) {
    auto p = encode_record(r, codec);
    if (p.target.empty() || p.source.size() > max_len || p.example.size() > max_len || p.target.size() + 1 > max_len) {
      ++skipped;
      continue;
    }
    out.push_back(std::move(p));
  }
  if (dropped) *dropped = skipped;
  return out;
}

ModelInputs decoding_inputs(const ManifestRecord& record, const SubwordCodec& codec, const ModelConfig& config) {
  ManifestRecord r = record;
  r.y.clear();
  r.my.clear();
  const auto p = encode_record(r, codec);
  ModelInputs in;
  in.source = IdBatch::from_sequences({p.source});
  if (uses_example(config.variant)) in.example = IdBatch::from_sequences({p.example});
  if (uses_masked_example(config.variant)) {
    if (p.masked_example.empty())
      throw InputError("record " + std::to_string(record.id) + " lacks M(y^m) (run the mask stage)");
    in.masked_example = IdBatch::from_sequences({p.masked_example});
  }
  return in;
}

}  // namespace egnmt
