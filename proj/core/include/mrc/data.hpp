#pragma once
// Corpus ingestion: SQuAD-v2 JSON parsing, rule tokenization, character-to-
// token span alignment, vocabularies, hand features, unknown-word masking and
// pretrained-embedding loading. Everything here is precision-free; features
// are stored as double and cast into the model's scalar type at encode time.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mrc/common.hpp"

namespace mrc {

struct Token {
  std::string text;
  int begin = 0;  // character offsets [begin, end) into the source string
  int end = 0;

  bool operator==(const Token&) const = default;
};

// Whitespace split with every punctuation character detached as its own
// token. Offsets always reconstruct the source: text[begin:end] == token.
std::vector<Token> tokenize(const std::string& text);

// Smallest token interval covering the character range [char_begin, char_end).
// Throws AlignmentError when the range covers no token.
std::pair<int, int> char_span_to_token_span(const std::vector<Token>& tokens, int char_begin, int char_end);

inline constexpr const char* kNullTokenText = "<null>";

// One question record. The passage always carries the trailing sentinel token
// that unanswerable spans point at.
struct Example {
  std::string id;
  std::string context;
  std::vector<Token> passage_tokens;   // length n+1, last is the sentinel
  std::vector<Token> question_tokens;
  std::vector<std::pair<int, int>> gold_spans;  // token spans; empty when unanswerable
  std::vector<std::string> gold_answer_texts;
  bool is_unanswerable = false;

  int null_index() const { return int(passage_tokens.size()) - 1; }
  // First listed gold span, or the sentinel pair for unanswerable questions.
  std::pair<int, int> training_span() const {
    if (is_unanswerable || gold_spans.empty()) return {null_index(), null_index()};
    return gold_spans.front();
  }
  // Original passage substring for a token span; the sentinel pair gives "".
  std::string span_text(int begin, int end) const;
};

struct ParsedDataset {
  std::vector<Example> examples;
  int skipped_examples = 0;  // answerable questions with no alignable answer
  int skipped_answers = 0;   // individual answers whose offset did not match
  int unanswerable = 0;
};

ParsedDataset parse_dataset(const std::string& json_text);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kNull = 2;

  Vocabulary();

  int add(const std::string& token);       // idempotent; returns the id
  int id(const std::string& token) const;  // kUnk for out-of-vocabulary tokens
  int find(const std::string& token) const;  // -1 when absent
  const std::string& token(int id) const { return tokens_[id]; }
  int size() const { return int(tokens_.size()); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Capped tag inventory; once full (or frozen) unseen tags map to the
// reserved unknown id.
class TagVocab {
 public:
  static constexpr int kUnkTag = 0;
  static constexpr int kNullTag = 1;

  explicit TagVocab(int cap);
  int add(const std::string& tag);  // kUnkTag when frozen or at capacity
  int id(const std::string& tag) const;
  int capacity() const { return cap_; }
  int size() const { return int(tags_.size()); }
  const std::string& tag(int id) const { return tags_[id]; }
  void freeze() { frozen_ = true; }

 private:
  int cap_;
  bool frozen_ = false;
  std::vector<std::string> tags_;
  std::unordered_map<std::string, int> index_;
};

// Pluggable linguistic annotation. The default provider emits a single
// placeholder POS/NER tag (the embedding pathway still runs) and lowercase
// lemmas; a file-backed provider serves pre-tagged corpora.
class TagProvider {
 public:
  virtual ~TagProvider() = default;
  virtual void annotate_passage(const std::string& example_id, const std::vector<Token>& tokens,
                                std::vector<std::string>* pos, std::vector<std::string>* ner,
                                std::vector<std::string>* lemma) const = 0;
  virtual void question_lemmas(const std::string& example_id, const std::vector<Token>& tokens,
                               std::vector<std::string>* lemma) const = 0;
};

class UniformTagProvider : public TagProvider {
 public:
  void annotate_passage(const std::string& example_id, const std::vector<Token>& tokens,
                        std::vector<std::string>* pos, std::vector<std::string>* ner,
                        std::vector<std::string>* lemma) const override;
  void question_lemmas(const std::string& example_id, const std::vector<Token>& tokens,
                       std::vector<std::string>* lemma) const override;
};

// JSON-lines file: one {"id", "pos": [...], "ner": [...]} object per example,
// arrays aligned with the real passage tokens; optional "passage_lemma" and
// "question_lemma" arrays.
class FileTagProvider : public TagProvider {
 public:
  explicit FileTagProvider(const std::string& path);
  void annotate_passage(const std::string& example_id, const std::vector<Token>& tokens,
                        std::vector<std::string>* pos, std::vector<std::string>* ner,
                        std::vector<std::string>* lemma) const override;
  void question_lemmas(const std::string& example_id, const std::vector<Token>& tokens,
                       std::vector<std::string>* lemma) const override;

 private:
  struct Entry {
    std::vector<std::string> pos, ner, passage_lemma, question_lemma;
  };
  std::unordered_map<std::string, Entry> entries_;
};

struct FeaturizedExample {
  std::string id;
  std::vector<int> passage_ids;   // word ids, sentinel id last
  std::vector<int> question_ids;
  std::vector<int> pos_ids;       // per passage token, sentinel tag id last
  std::vector<int> ner_ids;
  // per passage token: exact match, lowercase match, lemma match, term frequency
  std::vector<std::array<double, 4>> match_features;
  int span_begin = 0;  // training span (sentinel pair when unanswerable)
  int span_end = 0;
  bool is_unanswerable = false;

  int passage_len() const { return int(passage_ids.size()); }
  int question_len() const { return int(question_ids.size()); }

  bool operator==(const FeaturizedExample&) const = default;
};

void build_vocabulary(const std::vector<Example>& examples, Vocabulary* vocab);
void build_tag_vocabs(const std::vector<Example>& examples, const TagProvider& tags, TagVocab* pos,
                      TagVocab* ner);

FeaturizedExample featurize(const Example& example, const Vocabulary& vocab, const TagProvider& tags,
                            const TagVocab& pos_vocab, const TagVocab& ner_vocab);

// Training-time corruption: every non-sentinel word id independently becomes
// the unknown id with the given probability.
void mask_unknown_words(std::vector<FeaturizedExample>& batch, double rate, Rng& rng);

struct EmbeddingTable {
  int dim = 0;
  std::vector<double> weights;  // vocab_size x dim, row major
  int rows() const { return dim == 0 ? 0 : int(weights.size()) / dim; }
};

struct EmbeddingLoadStats {
  int matched = 0;
  int missing = 0;     // vocabulary tokens initialized uniformly
  int duplicates = 0;  // later file rows ignored, first occurrence wins
};

// Text rows "token v1 ... vDIM". Tokens absent from the file (always including
// the reserved ids) are initialized from seeded uniform(-0.05, 0.05). An empty
// path initializes the whole table that way.
EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, int dim, Rng& rng,
                               EmbeddingLoadStats* stats = nullptr);

struct PreparedCorpus {
  std::vector<Example> examples;
  std::vector<FeaturizedExample> features;
  int skipped_examples = 0;
  int skipped_answers = 0;
};

PreparedCorpus prepare_corpus(const ParsedDataset& parsed, const Vocabulary& vocab, const TagProvider& tags,
                              const TagVocab& pos_vocab, const TagVocab& ner_vocab);

// ---- persistence -----------------------------------------------------------

void save_vocabulary(const std::string& path, const Vocabulary& vocab, const TagVocab& pos,
                     const TagVocab& ner);
void load_vocabulary(const std::string& path, Vocabulary* vocab, TagVocab* pos, TagVocab* ner);

// JSON-lines cache: a self-describing header line followed by one record per
// example. Written atomically.
void save_cache(const std::string& path, const PreparedCorpus& corpus, std::uint64_t config_hash);
struct CacheLoad {
  PreparedCorpus corpus;
  std::uint64_t config_hash = 0;
};
CacheLoad load_cache(const std::string& path);

}  // namespace mrc
