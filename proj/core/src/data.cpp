#include "mrc/data.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <json.hpp>

namespace mrc {

using json = nlohmann::json;

namespace {

bool is_space_c(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct_c(unsigned char c) { return std::ispunct(c) != 0; }

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = char(std::tolower((unsigned char)c));
  return out;
}

}  // namespace

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> out;
  const int n = int(text.size());
  int i = 0;
  while (i < n) {
    const unsigned char c = text[i];
    if (is_space_c(c)) {
      ++i;
    } else if (is_punct_c(c)) {
      out.push_back({text.substr(i, 1), i, i + 1});
      ++i;
    } else {
      int j = i + 1;
      while (j < n && !is_space_c(text[j]) && !is_punct_c(text[j])) ++j;
      out.push_back({text.substr(i, j - i), i, j});
      i = j;
    }
  }
  return out;
}

std::pair<int, int> char_span_to_token_span(const std::vector<Token>& tokens, int char_begin, int char_end) {
  if (char_end <= char_begin)
    throw AlignmentError("empty character range [" + std::to_string(char_begin) + "," +
                         std::to_string(char_end) + ") covers no token");
  int b = -1, e = -1;
  for (int i = 0; i < int(tokens.size()); ++i) {
    const Token& t = tokens[i];
    if (t.end <= t.begin) continue;  // zero-width sentinel
    if (t.end > char_begin && t.begin < char_end) {
      if (b < 0) b = i;
      e = i;
    }
  }
  if (b < 0)
    throw AlignmentError("character range [" + std::to_string(char_begin) + "," + std::to_string(char_end) +
                         ") covers no token");
  return {b, e};
}

std::string Example::span_text(int begin, int end) const {
  if (begin == null_index() && end == null_index()) return "";
  const Token& b = passage_tokens[begin];
  const Token& e = passage_tokens[end];
  return context.substr(b.begin, e.end - b.begin);
}

ParsedDataset parse_dataset(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& err) {
    throw ParseError(std::string("dataset JSON: ") + err.what());
  }
  ParsedDataset out;
  try {
    for (const auto& article : doc.at("data")) {
      for (const auto& paragraph : article.at("paragraphs")) {
        const std::string context = paragraph.at("context").get<std::string>();
        const std::vector<Token> ctx_tokens = tokenize(context);
        for (const auto& qa : paragraph.at("qas")) {
          Example ex;
          ex.id = qa.at("id").get<std::string>();
          ex.context = context;
          ex.question_tokens = tokenize(qa.at("question").get<std::string>());
          ex.is_unanswerable = qa.value("is_impossible", false);
          ex.passage_tokens = ctx_tokens;
          if (!ex.is_unanswerable) {
            for (const auto& ans : qa.at("answers")) {
              const std::string text = ans.at("text").get<std::string>();
              const int start = ans.at("answer_start").get<int>();
              ex.gold_answer_texts.push_back(text);
              if (start < 0 || size_t(start) + text.size() > context.size() ||
                  context.compare(start, text.size(), text) != 0) {
                ++out.skipped_answers;
                continue;
              }
              try {
                ex.gold_spans.push_back(char_span_to_token_span(ctx_tokens, start, start + int(text.size())));
              } catch (const AlignmentError&) {
                ++out.skipped_answers;
              }
            }
            if (ex.gold_spans.empty()) {
              ++out.skipped_examples;
              continue;
            }
          } else {
            ++out.unanswerable;
          }
          const int len = int(context.size());
          ex.passage_tokens.push_back({kNullTokenText, len, len});
          out.examples.push_back(std::move(ex));
        }
      }
    }
  } catch (const json::exception& err) {
    throw ParseError(std::string("dataset JSON: ") + err.what());
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* reserved : {"<pad>", "<unk>", kNullTokenText}) {
    index_.emplace(reserved, int(tokens_.size()));
    tokens_.push_back(reserved);
  }
}

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, int(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

int Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

TagVocab::TagVocab(int cap) : cap_(cap) {
  for (const char* reserved : {"<unk-tag>", "<null-tag>"}) {
    index_.emplace(reserved, int(tags_.size()));
    tags_.push_back(reserved);
  }
}

int TagVocab::add(const std::string& tag) {
  auto it = index_.find(tag);
  if (it != index_.end()) return it->second;
  if (frozen_ || int(tags_.size()) >= cap_) return kUnkTag;
  index_.emplace(tag, int(tags_.size()));
  tags_.push_back(tag);
  return int(tags_.size()) - 1;
}

int TagVocab::id(const std::string& tag) const {
  auto it = index_.find(tag);
  return it == index_.end() ? kUnkTag : it->second;
}

void UniformTagProvider::annotate_passage(const std::string&, const std::vector<Token>& tokens,
                                          std::vector<std::string>* pos, std::vector<std::string>* ner,
                                          std::vector<std::string>* lemma) const {
  pos->assign(tokens.size(), "UNK-POS");
  ner->assign(tokens.size(), "UNK-NER");
  lemma->clear();
  lemma->reserve(tokens.size());
  for (const Token& t : tokens) lemma->push_back(lowercase(t.text));
}

void UniformTagProvider::question_lemmas(const std::string&, const std::vector<Token>& tokens,
                                         std::vector<std::string>* lemma) const {
  lemma->clear();
  lemma->reserve(tokens.size());
  for (const Token& t : tokens) lemma->push_back(lowercase(t.text));
}

FileTagProvider::FileTagProvider(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& err) {
      throw ParseError("tag file line " + std::to_string(line_no) + ": " + err.what());
    }
    Entry e;
    e.pos = rec.at("pos").get<std::vector<std::string>>();
    e.ner = rec.at("ner").get<std::vector<std::string>>();
    if (rec.contains("passage_lemma")) e.passage_lemma = rec.at("passage_lemma").get<std::vector<std::string>>();
    if (rec.contains("question_lemma")) e.question_lemma = rec.at("question_lemma").get<std::vector<std::string>>();
    entries_[rec.at("id").get<std::string>()] = std::move(e);
  }
}

void FileTagProvider::annotate_passage(const std::string& example_id, const std::vector<Token>& tokens,
                                       std::vector<std::string>* pos, std::vector<std::string>* ner,
                                       std::vector<std::string>* lemma) const {
  auto it = entries_.find(example_id);
  if (it == entries_.end()) throw FormatError("tag file has no entry for example " + example_id);
  const Entry& e = it->second;
  if (e.pos.size() != tokens.size() || e.ner.size() != tokens.size())
    throw FormatError("tag arrays for example " + example_id + " have " + std::to_string(e.pos.size()) +
                      " entries, passage has " + std::to_string(tokens.size()) + " tokens");
  *pos = e.pos;
  *ner = e.ner;
  if (!e.passage_lemma.empty()) {
    if (e.passage_lemma.size() != tokens.size())
      throw FormatError("passage_lemma for example " + example_id + " misaligned");
    *lemma = e.passage_lemma;
  } else {
    lemma->clear();
    for (const Token& t : tokens) lemma->push_back(lowercase(t.text));
  }
}

void FileTagProvider::question_lemmas(const std::string& example_id, const std::vector<Token>& tokens,
                                      std::vector<std::string>* lemma) const {
  auto it = entries_.find(example_id);
  if (it != entries_.end() && !it->second.question_lemma.empty()) {
    if (it->second.question_lemma.size() != tokens.size())
      throw FormatError("question_lemma for example " + example_id + " misaligned");
    *lemma = it->second.question_lemma;
    return;
  }
  lemma->clear();
  for (const Token& t : tokens) lemma->push_back(lowercase(t.text));
}

void build_vocabulary(const std::vector<Example>& examples, Vocabulary* vocab) {
  for (const Example& ex : examples) {
    for (int i = 0; i + 1 < int(ex.passage_tokens.size()); ++i) vocab->add(ex.passage_tokens[i].text);
    for (const Token& t : ex.question_tokens) vocab->add(t.text);
  }
}

void build_tag_vocabs(const std::vector<Example>& examples, const TagProvider& tags, TagVocab* pos,
                      TagVocab* ner) {
  std::vector<std::string> p, n, l;
  for (const Example& ex : examples) {
    std::vector<Token> real(ex.passage_tokens.begin(), ex.passage_tokens.end() - 1);
    tags.annotate_passage(ex.id, real, &p, &n, &l);
    for (const auto& t : p) pos->add(t);
    for (const auto& t : n) ner->add(t);
  }
}

FeaturizedExample featurize(const Example& example, const Vocabulary& vocab, const TagProvider& tags,
                            const TagVocab& pos_vocab, const TagVocab& ner_vocab) {
  FeaturizedExample fe;
  fe.id = example.id;
  const int n_total = int(example.passage_tokens.size());
  const int n_real = n_total - 1;

  fe.passage_ids.reserve(n_total);
  for (int i = 0; i < n_real; ++i) fe.passage_ids.push_back(vocab.id(example.passage_tokens[i].text));
  fe.passage_ids.push_back(Vocabulary::kNull);
  for (const Token& t : example.question_tokens) fe.question_ids.push_back(vocab.id(t.text));

  std::vector<Token> real(example.passage_tokens.begin(), example.passage_tokens.end() - 1);
  std::vector<std::string> pos, ner, lemma;
  tags.annotate_passage(example.id, real, &pos, &ner, &lemma);
  if (pos.size() != size_t(n_real) || ner.size() != size_t(n_real) || lemma.size() != size_t(n_real))
    throw FormatError("tag provider returned misaligned annotations for example " + example.id);
  fe.pos_ids.reserve(n_total);
  fe.ner_ids.reserve(n_total);
  for (int i = 0; i < n_real; ++i) {
    fe.pos_ids.push_back(pos_vocab.id(pos[i]));
    fe.ner_ids.push_back(ner_vocab.id(ner[i]));
  }
  fe.pos_ids.push_back(TagVocab::kNullTag);
  fe.ner_ids.push_back(TagVocab::kNullTag);

  std::vector<std::string> q_lemma;
  tags.question_lemmas(example.id, example.question_tokens, &q_lemma);
  std::unordered_map<std::string, int> counts;
  for (const Token& t : real) ++counts[t.text];
  auto in_set = [](const std::vector<std::string>& hay, const std::string& needle) {
    return std::find(hay.begin(), hay.end(), needle) != hay.end();
  };
  std::vector<std::string> q_orig, q_lower;
  for (const Token& t : example.question_tokens) {
    q_orig.push_back(t.text);
    q_lower.push_back(lowercase(t.text));
  }

  fe.match_features.reserve(n_total);
  for (int i = 0; i < n_real; ++i) {
    const std::string& text = real[i].text;
    fe.match_features.push_back({in_set(q_orig, text) ? 1.0 : 0.0,
                                 in_set(q_lower, lowercase(text)) ? 1.0 : 0.0,
                                 in_set(q_lemma, lemma[i]) ? 1.0 : 0.0,
                                 double(counts[text]) / n_total});
  }
  fe.match_features.push_back({0.0, 0.0, 0.0, 0.0});  // sentinel carries no surface evidence

  const auto [b, e] = example.training_span();
  fe.span_begin = b;
  fe.span_end = e;
  fe.is_unanswerable = example.is_unanswerable;
  return fe;
}

void mask_unknown_words(std::vector<FeaturizedExample>& batch, double rate, Rng& rng) {
  if (rate <= 0) return;
  for (FeaturizedExample& fe : batch) {
    for (int& id : fe.passage_ids)
      if (id != Vocabulary::kNull && rng.bernoulli(rate)) id = Vocabulary::kUnk;
    for (int& id : fe.question_ids)
      if (rng.bernoulli(rate)) id = Vocabulary::kUnk;
  }
}

EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, int dim, Rng& rng,
                               EmbeddingLoadStats* stats) {
  EmbeddingTable table;
  table.dim = dim;
  table.weights.assign(size_t(vocab.size()) * dim, 0.0);
  std::vector<char> filled(vocab.size(), 0);
  EmbeddingLoadStats local;

  if (!path.empty()) {
    std::istringstream in(read_file(path));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string token;
      row >> token;
      std::vector<double> values;
      double x;
      while (row >> x) values.push_back(x);
      if (int(values.size()) != dim)
        throw FormatError("embedding row has " + std::to_string(values.size()) + " values, expected " +
                          std::to_string(dim) + " at line " + std::to_string(line_no) + " of " + path);
      const int id = vocab.find(token);
      if (id < 0) continue;
      if (filled[id]) {
        ++local.duplicates;
        continue;
      }
      std::copy(values.begin(), values.end(), table.weights.begin() + size_t(id) * dim);
      filled[id] = 1;
      ++local.matched;
    }
  }
  for (int id = 0; id < vocab.size(); ++id) {
    if (filled[id]) continue;
    ++local.missing;
    for (int d = 0; d < dim; ++d) table.weights[size_t(id) * dim + d] = rng.uniform(-0.05, 0.05);
  }
  if (stats) *stats = local;
  return table;
}

PreparedCorpus prepare_corpus(const ParsedDataset& parsed, const Vocabulary& vocab, const TagProvider& tags,
                              const TagVocab& pos_vocab, const TagVocab& ner_vocab) {
  PreparedCorpus out;
  out.examples = parsed.examples;
  out.skipped_examples = parsed.skipped_examples;
  out.skipped_answers = parsed.skipped_answers;
  out.features.reserve(out.examples.size());
  for (const Example& ex : out.examples) out.features.push_back(featurize(ex, vocab, tags, pos_vocab, ner_vocab));
  return out;
}

// ---- persistence -----------------------------------------------------------

namespace {

json tokens_to_json(const std::vector<Token>& tokens) {
  json arr = json::array();
  for (const Token& t : tokens) arr.push_back(json::array({t.text, t.begin, t.end}));
  return arr;
}

std::vector<Token> tokens_from_json(const json& arr) {
  std::vector<Token> out;
  for (const auto& t : arr) out.push_back({t.at(0).get<std::string>(), t.at(1).get<int>(), t.at(2).get<int>()});
  return out;
}

constexpr int kCacheVersion = 1;
constexpr int kVocabVersion = 1;

}  // namespace

void save_vocabulary(const std::string& path, const Vocabulary& vocab, const TagVocab& pos,
                     const TagVocab& ner) {
  json doc;
  doc["kind"] = "mrc-vocab";
  doc["format_version"] = kVocabVersion;
  json tokens = json::array();
  for (int i = 0; i < vocab.size(); ++i) tokens.push_back(vocab.token(i));
  doc["tokens"] = std::move(tokens);
  json pos_tags = json::array(), ner_tags = json::array();
  for (int i = 0; i < pos.size(); ++i) pos_tags.push_back(pos.tag(i));
  for (int i = 0; i < ner.size(); ++i) ner_tags.push_back(ner.tag(i));
  doc["pos_tags"] = std::move(pos_tags);
  doc["ner_tags"] = std::move(ner_tags);
  doc["pos_capacity"] = pos.capacity();
  doc["ner_capacity"] = ner.capacity();
  write_file_atomic(path, doc.dump());
}

void load_vocabulary(const std::string& path, Vocabulary* vocab, TagVocab* pos, TagVocab* ner) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& err) {
    throw ParseError("vocabulary file " + path + ": " + err.what());
  }
  if (doc.value("kind", "") != "mrc-vocab")
    throw FormatError("not a vocabulary file: " + path);
  if (doc.value("format_version", -1) != kVocabVersion)
    throw FormatError("unsupported vocabulary format_version in " + path);
  *vocab = Vocabulary();
  const auto tokens = doc.at("tokens").get<std::vector<std::string>>();
  for (size_t i = 3; i < tokens.size(); ++i) vocab->add(tokens[i]);
  *pos = TagVocab(doc.value("pos_capacity", 64));
  *ner = TagVocab(doc.value("ner_capacity", 32));
  const auto pos_tags = doc.at("pos_tags").get<std::vector<std::string>>();
  const auto ner_tags = doc.at("ner_tags").get<std::vector<std::string>>();
  for (size_t i = 2; i < pos_tags.size(); ++i) pos->add(pos_tags[i]);
  for (size_t i = 2; i < ner_tags.size(); ++i) ner->add(ner_tags[i]);
  pos->freeze();
  ner->freeze();
}

void save_cache(const std::string& path, const PreparedCorpus& corpus, std::uint64_t config_hash) {
  std::ostringstream out;
  int unanswerable = 0;
  for (const Example& ex : corpus.examples) unanswerable += ex.is_unanswerable ? 1 : 0;
  json header;
  header["kind"] = "mrc-feature-cache";
  header["format_version"] = kCacheVersion;
  header["config_hash"] = config_hash;
  header["examples"] = corpus.examples.size();
  header["unanswerable"] = unanswerable;
  header["skipped_examples"] = corpus.skipped_examples;
  header["skipped_answers"] = corpus.skipped_answers;
  out << header.dump() << '\n';

  for (size_t i = 0; i < corpus.examples.size(); ++i) {
    const Example& ex = corpus.examples[i];
    const FeaturizedExample& fe = corpus.features[i];
    json rec;
    rec["id"] = ex.id;
    rec["context"] = ex.context;
    rec["passage_tokens"] = tokens_to_json(ex.passage_tokens);
    rec["question_tokens"] = tokens_to_json(ex.question_tokens);
    json spans = json::array();
    for (const auto& [b, e] : ex.gold_spans) spans.push_back(json::array({b, e}));
    rec["gold_spans"] = std::move(spans);
    rec["gold_texts"] = ex.gold_answer_texts;
    rec["impossible"] = ex.is_unanswerable;
    rec["passage_ids"] = fe.passage_ids;
    rec["question_ids"] = fe.question_ids;
    rec["pos_ids"] = fe.pos_ids;
    rec["ner_ids"] = fe.ner_ids;
    json match = json::array();
    for (const auto& m : fe.match_features) match.push_back(json::array({m[0], m[1], m[2], m[3]}));
    rec["match"] = std::move(match);
    rec["span"] = json::array({fe.span_begin, fe.span_end});
    out << rec.dump() << '\n';
  }
  write_file_atomic(path, out.str());
}

CacheLoad load_cache(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty cache file: " + path);
  CacheLoad out;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& err) {
    throw ParseError("cache header in " + path + ": " + err.what());
  }
  if (header.value("kind", "") != "mrc-feature-cache")
    throw FormatError("not a feature cache: " + path);
  if (header.value("format_version", -1) != kCacheVersion)
    throw FormatError("unsupported cache format_version in " + path);
  out.config_hash = header.at("config_hash").get<std::uint64_t>();
  out.corpus.skipped_examples = header.value("skipped_examples", 0);
  out.corpus.skipped_answers = header.value("skipped_answers", 0);

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& err) {
      throw ParseError("cache line " + std::to_string(line_no) + " in " + path + ": " + err.what());
    }
    Example ex;
    ex.id = rec.at("id").get<std::string>();
    ex.context = rec.at("context").get<std::string>();
    ex.passage_tokens = tokens_from_json(rec.at("passage_tokens"));
    ex.question_tokens = tokens_from_json(rec.at("question_tokens"));
    for (const auto& s : rec.at("gold_spans")) ex.gold_spans.emplace_back(s.at(0).get<int>(), s.at(1).get<int>());
    ex.gold_answer_texts = rec.at("gold_texts").get<std::vector<std::string>>();
    ex.is_unanswerable = rec.at("impossible").get<bool>();

    FeaturizedExample fe;
    fe.id = ex.id;
    fe.passage_ids = rec.at("passage_ids").get<std::vector<int>>();
    fe.question_ids = rec.at("question_ids").get<std::vector<int>>();
    fe.pos_ids = rec.at("pos_ids").get<std::vector<int>>();
    fe.ner_ids = rec.at("ner_ids").get<std::vector<int>>();
    for (const auto& m : rec.at("match"))
      fe.match_features.push_back(
          {m.at(0).get<double>(), m.at(1).get<double>(), m.at(2).get<double>(), m.at(3).get<double>()});
    fe.span_begin = rec.at("span").at(0).get<int>();
    fe.span_end = rec.at("span").at(1).get<int>();
    fe.is_unanswerable = ex.is_unanswerable;

    out.corpus.examples.push_back(std::move(ex));
    out.corpus.features.push_back(std::move(fe));
  }
  return out;
}

}  // namespace mrc
