#pragma once

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptlm/common.hpp"

// Word-level text pipeline: whitespace tokenization, frequency vocabularies
// with fixed reserved ids, seeded corpus splitting, batching, and the small
// weighted grammars that generate the desk-scale domain corpora.

namespace ptlm {

// Lowercases ASCII letters and splits on Unicode whitespace. Assumes the text
// already passed UTF-8 validation (load paths validate line by line).
std::vector<std::string> tokenize(const std::string& text);

// Byte offset of the first invalid UTF-8 sequence, or npos if none.
std::size_t find_invalid_utf8(const unsigned char* data, std::size_t n);

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int> token_to_id;

    // provenance
    std::string source_digest;  // hex digest of the corpus text the vocab came from, "" if none
    int min_freq = 1;
    int max_size = 0;

    int size() const { return static_cast<int>(id_to_token.size()); }

    int id_of(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnk : it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= size())
            throw IndexError("vocab: id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(size()) + " entries");
        return id_to_token[static_cast<std::size_t>(id)];
    }
};

// Frequency-ordered vocabulary (ties broken lexicographically), truncated to
// max_size entries including the four reserved ids.
Vocab build_vocab(const std::vector<std::vector<std::string>>& sentences, int min_freq, int max_size,
                  const std::string& source_digest = "");

std::vector<int> encode(const Vocab& vocab, const std::vector<std::string>& tokens);
std::vector<std::string> decode(const Vocab& vocab, const std::vector<int>& ids);

// Wraps an encoded sentence in the BOS/EOS markers the model consumes.
inline std::vector<int> frame_sentence(const std::vector<int>& ids) {
    std::vector<int> framed;
    framed.reserve(ids.size() + 2);
    framed.push_back(Vocab::kBos);
    framed.insert(framed.end(), ids.begin(), ids.end());
    framed.push_back(Vocab::kEos);
    return framed;
}

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

struct TokenizedCorpus {
    std::shared_ptr<const Vocab> vocab;
    std::vector<std::vector<int>> sentences;  // encoded, no BOS/EOS stored
    std::string split_role;                   // train | dev | test
    std::string domain;
};

struct SplitFractions {
    double train = 0.8;
    double dev = 0.1;
    double test = 0.1;
};

// One sentence per line; validates UTF-8, tokenizes, drops blank lines.
std::vector<std::vector<std::string>> load_sentence_tokens(const std::string& path);

// Seeded shuffle then contiguous split. Fractions must sum to 1.
struct SplitTokens {
    std::vector<std::vector<std::string>> train, dev, test;
};
SplitTokens split_sentences(std::vector<std::vector<std::string>> sentences, const SplitFractions& fracs,
                            std::uint64_t seed);

struct CorpusSplits {
    TokenizedCorpus train, dev, test;
};

// load_sentence_tokens + split_sentences + encoding with an existing vocab.
CorpusSplits load_corpus(const std::string& path, const SplitFractions& fracs, std::uint64_t seed,
                         std::shared_ptr<const Vocab> vocab, const std::string& domain);

// Deterministic batch order for one epoch: seeded shuffle of sentence
// indices, chunked with the last partial batch kept.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n_sentences, int batch_size, RngState& rng);

// ---- weighted domain grammars ----

struct Production {
    std::vector<std::string> expansion;  // terminals and $-prefixed nonterminals
    double weight = 1.0;
};

struct DomainGrammar {
    std::string name;
    std::map<std::string, std::vector<Production>> rules;  // keys are $-prefixed, start is $root

    void validate() const;

    // all terminal symbols that can ever be emitted
    std::vector<std::string> terminals() const;
};

DomainGrammar parse_grammar_json(const std::string& text, const std::string& name);

// Grammars shipped with the toolkit: "fastfood-orders" and "banking-queries".
// They share function words but have disjoint content vocabularies.
DomainGrammar builtin_grammar(const std::string& name);
std::vector<std::string> builtin_grammar_names();

// n weighted samples from the grammar, deterministic per seed.
std::vector<std::vector<std::string>> generate_domain(const DomainGrammar& grammar, int n, std::uint64_t seed);

}  // namespace ptlm
