#ifndef MSRM_CONFIG_HPP
#define MSRM_CONFIG_HPP

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "msrm/errors.hpp"

namespace msrm {

/// Flat key = value configuration with [dotted.table] headers, numbers,
/// quoted strings, booleans, numeric arrays, and row-list matrices.
class ConfigMap {
  public:
    using Value = std::variant<double, bool, std::string, std::vector<double>,
                               std::vector<std::vector<double>>>;

    static ConfigMap parse(std::istream& in, const std::string& origin = "<config>") {
        ConfigMap cfg;
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            strip_comment(line);
            std::string t = trim(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) +
                                      ": unterminated table header");
                section = trim(t.substr(1, t.size() - 2));
                if (section.empty())
                    throw ConfigError(origin + ":" + std::to_string(lineno) +
                                      ": empty table name");
                continue;
            }
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected key = value");
            std::string key = trim(t.substr(0, eq));
            std::string raw = trim(t.substr(eq + 1));
            if (key.empty() || raw.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": empty key or value");
            std::string full = section.empty() ? key : section + "." + key;
            cfg.values_[full] = parse_value(raw, origin, lineno);
        }
        return cfg;
    }

    static ConfigMap parse_text(const std::string& text) {
        std::istringstream in(text);
        return parse(in);
    }

    static ConfigMap load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        return parse(in, path);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    double number(const std::string& key) const {
        const auto* v = std::get_if<double>(&at(key));
        if (!v) throw ConfigError("config key '" + key + "' is not a number");
        return *v;
    }

    double number_or(const std::string& key, double fallback) const {
        return has(key) ? number(key) : fallback;
    }

    std::string text(const std::string& key) const {
        const auto* v = std::get_if<std::string>(&at(key));
        if (!v) throw ConfigError("config key '" + key + "' is not a string");
        return *v;
    }

    std::string text_or(const std::string& key, const std::string& fallback) const {
        return has(key) ? text(key) : fallback;
    }

    std::vector<double> array(const std::string& key) const {
        const auto& val = at(key);
        if (const auto* v = std::get_if<std::vector<double>>(&val)) return *v;
        if (const auto* s = std::get_if<double>(&val)) return {*s};
        throw ConfigError("config key '" + key + "' is not an array");
    }

    std::vector<std::vector<double>> matrix(const std::string& key) const {
        const auto& val = at(key);
        if (const auto* v = std::get_if<std::vector<std::vector<double>>>(&val)) return *v;
        if (const auto* a = std::get_if<std::vector<double>>(&val)) return {*a};
        throw ConfigError("config key '" + key + "' is not a matrix");
    }

    const std::map<std::string, Value>& entries() const { return values_; }

  private:
    const Value& at(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
        return it->second;
    }

    static void strip_comment(std::string& line) {
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '#' && !in_str) {
                line.erase(i);
                return;
            }
        }
    }

    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    static Value parse_value(const std::string& raw, const std::string& origin, int lineno) {
        auto fail = [&](const std::string& why) -> ConfigError {
            return ConfigError(origin + ":" + std::to_string(lineno) + ": " + why);
        };
        if (raw.front() == '"') {
            if (raw.size() < 2 || raw.back() != '"') throw fail("unterminated string");
            return raw.substr(1, raw.size() - 2);
        }
        if (raw == "true") return true;
        if (raw == "false") return false;
        if (raw.front() == '[') {
            if (raw.back() != ']') throw fail("unterminated array");
            std::string inner = trim(raw.substr(1, raw.size() - 2));
            if (!inner.empty() && inner.front() == '[') {
                std::vector<std::vector<double>> rows;
                std::size_t pos = 0;
                while (pos < inner.size()) {
                    auto open = inner.find('[', pos);
                    if (open == std::string::npos) break;
                    auto close = inner.find(']', open);
                    if (close == std::string::npos) throw fail("unterminated matrix row");
                    rows.push_back(parse_number_list(inner.substr(open + 1, close - open - 1),
                                                     fail));
                    pos = close + 1;
                }
                if (rows.empty()) throw fail("empty matrix");
                for (const auto& r : rows)
                    if (r.size() != rows.front().size()) throw fail("ragged matrix rows");
                return rows;
            }
            return parse_number_list(inner, fail);
        }
        try {
            std::size_t used = 0;
            double v = std::stod(raw, &used);
            if (used != raw.size()) throw fail("trailing characters after number");
            return v;
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            throw fail("cannot parse value '" + raw + "'");
        }
    }

    template <class Fail>
    static std::vector<double> parse_number_list(const std::string& s, Fail&& fail) {
        std::vector<double> out;
        std::string cur;
        std::istringstream ss(s);
        while (std::getline(ss, cur, ',')) {
            std::string t = trim(cur);
            if (t.empty()) continue;
            try {
                out.push_back(std::stod(t));
            } catch (...) {
                throw fail("cannot parse array element '" + t + "'");
            }
        }
        return out;
    }

    std::map<std::string, Value> values_;
};

} // namespace msrm

#endif
