#include "ptlm/text_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace ptlm {

namespace {

bool is_unicode_space(std::uint32_t cp) {
    switch (cp) {
        case 0x09:
        case 0x0A:
        case 0x0B:
        case 0x0C:
        case 0x0D:
        case 0x20:
        case 0x85:
        case 0xA0:
        case 0x1680:
        case 0x2028:
        case 0x2029:
        case 0x202F:
        case 0x205F:
        case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

// Decodes the codepoint at byte i; advances i. Tolerates stray bytes by
// treating them as opaque single-byte characters.
std::uint32_t next_codepoint(const std::string& s, std::size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    auto cont = [&](std::size_t k) {
        return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
    };
    auto bits = [&](std::size_t k) { return static_cast<std::uint32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F); };
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    if ((b0 & 0xE0) == 0xC0 && cont(1)) {
        const std::uint32_t cp = (static_cast<std::uint32_t>(b0 & 0x1F) << 6) | bits(1);
        i += 2;
        return cp;
    }
    if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
        const std::uint32_t cp = (static_cast<std::uint32_t>(b0 & 0x0F) << 12) | (bits(1) << 6) | bits(2);
        i += 3;
        return cp;
    }
    if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
        const std::uint32_t cp =
            (static_cast<std::uint32_t>(b0 & 0x07) << 18) | (bits(1) << 12) | (bits(2) << 6) | bits(3);
        i += 4;
        return cp;
    }
    ++i;
    return 0xFFFD;
}

const std::array<std::string, 4> kReserved{"<pad>", "<unk>", "<bos>", "<eos>"};

}  // namespace

std::size_t find_invalid_utf8(const unsigned char* d, std::size_t n) {
    std::size_t i = 0;
    auto cont = [&](std::size_t k) { return i + k < n && (d[i + k] & 0xC0) == 0x80; };
    while (i < n) {
        const unsigned char b = d[i];
        if (b < 0x80) {
            ++i;
        } else if (b >= 0xC2 && b <= 0xDF) {
            if (!cont(1)) return i;
            i += 2;
        } else if (b == 0xE0) {
            if (!(i + 1 < n && d[i + 1] >= 0xA0 && d[i + 1] <= 0xBF && cont(2))) return i;
            i += 3;
        } else if (b == 0xED) {
            if (!(i + 1 < n && d[i + 1] >= 0x80 && d[i + 1] <= 0x9F && cont(2))) return i;  // no surrogates
            i += 3;
        } else if (b >= 0xE1 && b <= 0xEF) {
            if (!(cont(1) && cont(2))) return i;
            i += 3;
        } else if (b == 0xF0) {
            if (!(i + 1 < n && d[i + 1] >= 0x90 && d[i + 1] <= 0xBF && cont(2) && cont(3))) return i;
            i += 4;
        } else if (b >= 0xF1 && b <= 0xF3) {
            if (!(cont(1) && cont(2) && cont(3))) return i;
            i += 4;
        } else if (b == 0xF4) {
            if (!(i + 1 < n && d[i + 1] >= 0x80 && d[i + 1] <= 0x8F && cont(2) && cont(3))) return i;
            i += 4;
        } else {
            return i;  // C0, C1, F5..FF or stray continuation byte
        }
    }
    return std::string::npos;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        const std::uint32_t cp = next_codepoint(text, i);
        if (is_unicode_space(cp)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else if (cp < 0x80) {
            char c = static_cast<char>(cp);
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            current.push_back(c);
        } else {
            current.append(text, start, i - start);  // non-ASCII kept verbatim
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& sentences, int min_freq, int max_size,
                  const std::string& source_digest) {
    if (max_size < 5)
        throw ContractError("build_vocab: max_size must be at least 5 to fit the reserved ids, got " +
                            std::to_string(max_size));
    if (min_freq < 1) throw ContractError("build_vocab: min_freq must be at least 1");

    std::map<std::string, std::size_t> freq;  // ordered map: lexicographic among equal counts for free
    for (const auto& s : sentences)
        for (const auto& t : s) ++freq[t];

    std::vector<std::pair<std::string, std::size_t>> entries;
    for (const auto& [tok, n] : freq) {
        if (n < static_cast<std::size_t>(min_freq)) continue;
        if (std::find(kReserved.begin(), kReserved.end(), tok) != kReserved.end()) continue;
        entries.emplace_back(tok, n);
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab v;
    v.min_freq = min_freq;
    v.max_size = max_size;
    v.source_digest = source_digest;
    for (const auto& r : kReserved) v.id_to_token.push_back(r);
    for (const auto& [tok, n] : entries) {
        if (v.size() >= max_size) break;
        v.id_to_token.push_back(tok);
    }
    for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
    return v;
}

std::vector<int> encode(const Vocab& vocab, const std::vector<std::string>& tokens) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
    return ids;
}

std::vector<std::string> decode(const Vocab& vocab, const std::vector<int>& ids) {
    std::vector<std::string> tokens;
    tokens.reserve(ids.size());
    for (int id : ids) tokens.push_back(vocab.token_of(id));
    return tokens;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
    nlohmann::json j;
    j["tokens"] = vocab.id_to_token;
    j["min_freq"] = vocab.min_freq;
    j["max_size"] = vocab.max_size;
    j["source_digest"] = vocab.source_digest;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path + " for reading");
    nlohmann::json j;
    try {
        in >> j;
        Vocab v;
        v.id_to_token = j.at("tokens").get<std::vector<std::string>>();
        v.min_freq = j.at("min_freq").get<int>();
        v.max_size = j.at("max_size").get<int>();
        v.source_digest = j.at("source_digest").get<std::string>();
        for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
        for (std::size_t i = 0; i < kReserved.size(); ++i)
            if (v.id_to_token.size() <= i || v.id_to_token[i] != kReserved[i])
                throw FormatError("vocab file " + path + " lacks reserved token " + kReserved[i] + " at id " +
                                  std::to_string(i));
        return v;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("vocab file " + path + " is malformed: " + e.what());
    }
}

std::vector<std::vector<std::string>> load_sentence_tokens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path + " for reading");
    std::vector<std::vector<std::string>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t bad = find_invalid_utf8(reinterpret_cast<const unsigned char*>(line.data()), line.size());
        if (bad != std::string::npos)
            throw InputError(path + ":" + std::to_string(line_no) + ": invalid UTF-8 at byte " +
                             std::to_string(bad));
        std::vector<std::string> tokens = tokenize(line);
        if (!tokens.empty()) out.push_back(std::move(tokens));
    }
    return out;
}

SplitTokens split_sentences(std::vector<std::vector<std::string>> sentences, const SplitFractions& fracs,
                            std::uint64_t seed) {
    const double sum = fracs.train + fracs.dev + fracs.test;
    if (std::fabs(sum - 1.0) > 1e-6)
        throw InputError("split fractions sum to " + format_real(sum) + ", expected 1");
    if (fracs.train < 0 || fracs.dev < 0 || fracs.test < 0)
        throw InputError("split fractions must be non-negative");

    RngState rng(seed);
    rng.shuffle(sentences);

    const std::size_t n = sentences.size();
    const auto cut1 = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fracs.train));
    const auto cut2 = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (fracs.train + fracs.dev)));

    SplitTokens out;
    out.train.assign(sentences.begin(), sentences.begin() + static_cast<std::ptrdiff_t>(cut1));
    out.dev.assign(sentences.begin() + static_cast<std::ptrdiff_t>(cut1),
                   sentences.begin() + static_cast<std::ptrdiff_t>(cut2));
    out.test.assign(sentences.begin() + static_cast<std::ptrdiff_t>(cut2), sentences.end());
    return out;
}

namespace {

TokenizedCorpus encode_corpus(std::shared_ptr<const Vocab> vocab,
                              const std::vector<std::vector<std::string>>& sentences, const std::string& role,
                              const std::string& domain) {
    TokenizedCorpus c;
    c.vocab = vocab;
    c.split_role = role;
    c.domain = domain;
    for (const auto& s : sentences) c.sentences.push_back(encode(*vocab, s));
    return c;
}

}  // namespace

CorpusSplits load_corpus(const std::string& path, const SplitFractions& fracs, std::uint64_t seed,
                         std::shared_ptr<const Vocab> vocab, const std::string& domain) {
    if (!vocab) throw ContractError("load_corpus: vocab is required");
    SplitTokens split = split_sentences(load_sentence_tokens(path), fracs, seed);
    CorpusSplits out;
    out.train = encode_corpus(vocab, split.train, "train", domain);
    out.dev = encode_corpus(vocab, split.dev, "dev", domain);
    out.test = encode_corpus(vocab, split.test, "test", domain);
    return out;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n_sentences, int batch_size, RngState& rng) {
    if (batch_size < 1) throw ContractError("batch_iter: batch_size must be >= 1");
    std::vector<std::size_t> order(n_sentences);
    for (std::size_t i = 0; i < n_sentences; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

// ---- grammars ----

void DomainGrammar::validate() const {
    auto production_label = [&](const std::string& nt, std::size_t idx) {
        return nt + " production " + std::to_string(idx);
    };

    if (rules.find("$root") == rules.end())
        throw ValidationError("grammar " + name + ": missing start symbol $root");

    for (const auto& [nt, prods] : rules) {
        if (nt.empty() || nt[0] != '$')
            throw ValidationError("grammar " + name + ": rule name " + nt + " must start with $");
        if (prods.empty()) throw ValidationError("grammar " + name + ": " + nt + " has no productions");
        for (std::size_t i = 0; i < prods.size(); ++i) {
            if (!(prods[i].weight > 0))
                throw ValidationError("grammar " + name + ": " + production_label(nt, i) +
                                      " has non-positive weight " + format_real(prods[i].weight));
            if (prods[i].expansion.empty())
                throw ValidationError("grammar " + name + ": " + production_label(nt, i) + " is empty");
            for (const auto& sym : prods[i].expansion)
                if (!sym.empty() && sym[0] == '$' && rules.find(sym) == rules.end())
                    throw ValidationError("grammar " + name + ": " + production_label(nt, i) +
                                          " references undefined nonterminal " + sym);
        }
    }

    // reachability from $root
    std::set<std::string> reached{"$root"};
    std::vector<std::string> frontier{"$root"};
    while (!frontier.empty()) {
        const std::string nt = frontier.back();
        frontier.pop_back();
        for (const auto& prod : rules.at(nt))
            for (const auto& sym : prod.expansion)
                if (!sym.empty() && sym[0] == '$' && reached.insert(sym).second) frontier.push_back(sym);
    }
    for (const auto& [nt, prods] : rules)
        if (reached.find(nt) == reached.end())
            throw ValidationError("grammar " + name + ": nonterminal " + nt + " unreachable from $root");

    // termination: fixed point over "has a production of only terminating symbols"
    std::set<std::string> terminating;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& [nt, prods] : rules) {
            if (terminating.count(nt)) continue;
            for (const auto& prod : prods) {
                bool ok = true;
                for (const auto& sym : prod.expansion)
                    if (!sym.empty() && sym[0] == '$' && !terminating.count(sym)) {
                        ok = false;
                        break;
                    }
                if (ok) {
                    terminating.insert(nt);
                    changed = true;
                    break;
                }
            }
        }
    }
    for (const auto& [nt, prods] : rules)
        if (!terminating.count(nt))
            throw ValidationError("grammar " + name + ": nonterminal " + nt + " cannot terminate");
}

std::vector<std::string> DomainGrammar::terminals() const {
    std::set<std::string> seen;
    for (const auto& [nt, prods] : rules)
        for (const auto& prod : prods)
            for (const auto& sym : prod.expansion)
                if (sym.empty() || sym[0] != '$') seen.insert(sym);
    return {seen.begin(), seen.end()};
}

DomainGrammar parse_grammar_json(const std::string& text, const std::string& name) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("grammar " + name + ": not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ValidationError("grammar " + name + ": top level must be an object of rules");

    DomainGrammar g;
    g.name = name;
    for (const auto& [nt, prods] : j.items()) {
        if (!prods.is_array())
            throw ValidationError("grammar " + name + ": rule " + nt + " must be an array of productions");
        std::vector<Production> list;
        for (std::size_t i = 0; i < prods.size(); ++i) {
            const auto& p = prods[i];
            if (!p.is_object() || !p.contains("expansion") || !p.contains("weight"))
                throw ValidationError("grammar " + name + ": " + nt + " production " + std::to_string(i) +
                                      " needs expansion and weight");
            Production prod;
            try {
                prod.expansion = p.at("expansion").get<std::vector<std::string>>();
                prod.weight = p.at("weight").get<double>();
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError("grammar " + name + ": " + nt + " production " + std::to_string(i) +
                                      " is malformed: " + e.what());
            }
            list.push_back(std::move(prod));
        }
        g.rules[nt] = std::move(list);
    }
    g.validate();
    return g;
}

namespace {

void expand_symbol(const DomainGrammar& g, const std::string& sym, RngState& rng,
                   std::vector<std::string>& out, int depth) {
    if (depth > 64) throw ContractError("grammar " + g.name + ": expansion depth exceeded at " + sym);
    if (sym.empty() || sym[0] != '$') {
        out.push_back(sym);
        return;
    }
    const auto& prods = g.rules.at(sym);
    double total = 0;
    for (const auto& p : prods) total += p.weight;
    double r = rng.unit() * total;
    std::size_t pick = prods.size() - 1;
    for (std::size_t i = 0; i < prods.size(); ++i) {
        r -= prods[i].weight;
        if (r < 0) {
            pick = i;
            break;
        }
    }
    for (const auto& s : prods[pick].expansion) expand_symbol(g, s, rng, out, depth + 1);
}

}  // namespace

std::vector<std::vector<std::string>> generate_domain(const DomainGrammar& grammar, int n, std::uint64_t seed) {
    if (n < 0) throw ContractError("generate_domain: n must be non-negative");
    grammar.validate();
    RngState rng(seed);
    std::vector<std::vector<std::string>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<std::string> sentence;
        expand_symbol(grammar, "$root", rng, sentence, 0);
        out.push_back(std::move(sentence));
    }
    return out;
}

}  // namespace ptlm
