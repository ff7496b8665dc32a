#pragma once

// Reference implementations written independently of the library, used to
// cross-check it.

#include <cctype>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

inline std::vector<std::string> tokens(const std::string& text) {
    static const std::regex kEdges("^[[:punct:]]+|[[:punct:]]+$");
    std::istringstream in(text);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) {
        out.push_back(std::regex_replace(w, kEdges, ""));
    }
    return out;
}

inline bool qualifies(const std::string& t) {
    if (t.empty()) {
        return false;
    }
    if (t[0] >= 'A' && t[0] <= 'Z') {
        return true;
    }
    for (char c : t) {
        if (c < '0' || c > '9') {
            return false;
        }
    }
    return true;
}

inline std::string lower(std::string s) {
    for (auto& c : s) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return s;
}

// Enumerates every span and keeps those matching the definition directly:
// the span lies inside a maximal qualifying run, starts and ends on a
// non-stopword, and everything else in the run is a stopword prefix/suffix.
inline std::set<std::string> entities(const std::string& text, const std::set<std::string>& stopwords) {
    auto t = tokens(text);
    auto stop = [&](std::size_t k) { return stopwords.count(lower(t[k])) > 0; };
    std::set<std::string> out;
    const std::size_t n = t.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j <= n; ++j) {
            bool all = true;
            for (std::size_t k = i; k < j; ++k) {
                all = all && qualifies(t[k]);
            }
            bool maximal = (i == 0 || !qualifies(t[i - 1])) && (j == n || !qualifies(t[j]));
            if (!all || !maximal) {
                continue;
            }
            for (std::size_t a = i; a < j; ++a) {
                for (std::size_t b = a + 1; b <= j; ++b) {
                    if (stop(a) || stop(b - 1)) {
                        continue;
                    }
                    bool rest_stop = true;
                    for (std::size_t k = i; k < a; ++k) {
                        rest_stop = rest_stop && stop(k);
                    }
                    for (std::size_t k = b; k < j; ++k) {
                        rest_stop = rest_stop && stop(k);
                    }
                    if (!rest_stop) {
                        continue;
                    }
                    std::string e;
                    for (std::size_t k = a; k < b; ++k) {
                        e += (k > a ? " " : "") + lower(t[k]);
                    }
                    out.insert(e);
                }
            }
        }
    }
    return out;
}

inline double density(const std::string& summary, const std::string& document,
                      const std::set<std::string>& stopwords) {
    auto s = entities(summary, stopwords);
    auto d = entities(document, stopwords);
    std::size_t shared = 0;
    for (const auto& e : s) {
        shared += d.count(e);
    }
    std::istringstream in(summary);
    std::size_t words = 0;
    std::string w;
    while (in >> w) {
        ++words;
    }
    return static_cast<double>(shared) / static_cast<double>(words);
}

// Random text mixing names, numbers, stopwords and punctuation.
inline std::string random_text(std::mt19937& rng, int max_tokens) {
    static const std::vector<std::string> vocab = {
        "Paris", "London", "Tim", "Cook", "Apple", "the", "The", "of", "Of", "in", "river", "bridge", "2024", "17",
        "visited", "said", "New", "York", "Harbor", "and", "And", "x9", "(Reuters)", "Smith,", "\"Quoted\"", "a",
        "A", "mid-year", "U.S.", "—", "...", "3rd", "Bank", "The.", "of,",
    };
    std::uniform_int_distribution<int> len(1, max_tokens);
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    int n = len(rng);
    std::string out;
    for (int i = 0; i < n; ++i) {
        out += (i ? " " : "") + vocab[pick(rng)];
    }
    return out;
}

}  // namespace oracle
