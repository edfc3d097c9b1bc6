#include "epitome/pipeline.hpp"

#include "epitome/util.hpp"

namespace epitome::pipeline {

LabelPreprocessor LabelPreprocessor::load(const std::filesystem::path& corpus, const std::filesystem::path& lexicon,
                                          const std::filesystem::path& canonical_map) {
  LabelPreprocessor p{tokenizer::TokenizerPipeline::load(corpus, lexicon), std::nullopt};
  if (!canonical_map.empty()) p.canonical = relations::RelationLexicon::load_canonical(canonical_map);
  return p;
}

std::vector<std::string> LabelPreprocessor::operator()(std::string_view name) const {
  const auto result = tokenizer::tokenize_name(tokenizer, name);
  auto labels = tokenizer::expand_abbreviations(result.labels, tokenizer.lexicon);
  for (auto& l : labels) l = relations::stem(l);
  if (canonical) labels = canonical->canonicalize(labels);
  return labels;
}

std::map<std::string, std::vector<std::string>> preprocess_records(const LabelPreprocessor& pre,
                                                                    const std::vector<ingest::FunctionRecord>& records,
                                                                    std::size_t jobs) {
  std::vector<std::vector<std::string>> labels(records.size());
  util::parallel_for(records.size(), jobs, [&](std::size_t i) { labels[i] = pre(records[i].name); });
  std::map<std::string, std::vector<std::string>> out;
  for (std::size_t i = 0; i < records.size(); ++i) out.emplace(records[i].id, std::move(labels[i]));
  return out;
}

}  // namespace epitome::pipeline
