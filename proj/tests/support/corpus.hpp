#pragma once

// Loader for the committed oracle corpus (tests/data/oracle_corpus.txt).

#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace replisp::testing {

struct CorpusEntry {
    std::string source;
    std::string value;
    std::string output;
};

inline std::string corpus_unescape(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            char c = s[++i];
            if (c == 'n') out += '\n';
            else if (c == 's') out += ' ';
            else if (c == '\\') out += '\\';
            else throw std::runtime_error("bad escape in corpus output");
        } else {
            out += s[i];
        }
    }
    return out;
}

inline std::string test_data_dir() {
    const char* d = std::getenv("REPLISP_TEST_DATA");
    if (!d) throw std::runtime_error("REPLISP_TEST_DATA not set");
    return d;
}

inline std::vector<CorpusEntry> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus: " + path);
    std::vector<CorpusEntry> entries;
    CorpusEntry cur;
    bool have = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            if (have) entries.push_back(cur);
            cur = {};
            have = false;
            continue;
        }
        if (line[0] == '#') continue;
        if (line.rfind("F ", 0) == 0) {
            cur.source = line.substr(2);
            have = true;
        } else if (line.rfind("V ", 0) == 0) {
            cur.value = line.substr(2);
        } else if (line.rfind("O ", 0) == 0) {
            cur.output = corpus_unescape(line.substr(2));
        } else {
            throw std::runtime_error("malformed corpus line: " + line);
        }
    }
    if (have) entries.push_back(cur);
    return entries;
}

inline std::vector<CorpusEntry> load_oracle_corpus() {
    return load_corpus(test_data_dir() + "/oracle_corpus.txt");
}

} // namespace replisp::testing
