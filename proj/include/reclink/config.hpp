#ifndef RECLINK_CONFIG_HPP
#define RECLINK_CONFIG_HPP

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace reclink {

// Raised for malformed config files and for missing or mistyped keys.
// The CLI maps this to its configuration-error exit status.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Strict parser for the TOML subset used by the tool configs:
// [table] and [table.sub] headers, key = value pairs, # comments,
// basic strings, integers, floats, booleans, and flat scalar arrays.
// Anything outside that subset is rejected with a line number.
class Toml {
public:
    using Scalar = std::variant<std::int64_t, double, bool, std::string>;
    using Value = std::variant<Scalar, std::vector<Scalar>>;

    static Toml parse(const std::string& text) {
        Toml out;
        std::istringstream in(text);
        std::string line;
        std::string prefix;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip_comment(line, lineno);
            s = trim(s);
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.size() < 3 || s.back() != ']')
                    fail(lineno, "malformed table header");
                if (s[1] == '[') fail(lineno, "arrays of tables are not supported");
                prefix = trim(s.substr(1, s.size() - 2));
                if (prefix.empty()) fail(lineno, "empty table name");
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos) fail(lineno, "expected key = value");
            std::string key = trim(s.substr(0, eq));
            std::string raw = trim(s.substr(eq + 1));
            if (key.empty()) fail(lineno, "empty key");
            if (raw.empty()) fail(lineno, "empty value");
            std::string full = prefix.empty() ? key : prefix + "." + key;
            if (out.values_.count(full)) fail(lineno, "duplicate key '" + full + "'");
            out.values_[full] = parse_value(raw, lineno);
        }
        return out;
    }

    static Toml parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::int64_t get_int(const std::string& key) const {
        const Scalar& s = scalar(key);
        if (auto* v = std::get_if<std::int64_t>(&s)) return *v;
        throw ConfigError("key '" + key + "' is not an integer");
    }

    double get_double(const std::string& key) const {
        const Scalar& s = scalar(key);
        if (auto* v = std::get_if<double>(&s)) return *v;
        if (auto* v = std::get_if<std::int64_t>(&s)) return static_cast<double>(*v);
        throw ConfigError("key '" + key + "' is not a number");
    }

    bool get_bool(const std::string& key) const {
        const Scalar& s = scalar(key);
        if (auto* v = std::get_if<bool>(&s)) return *v;
        throw ConfigError("key '" + key + "' is not a boolean");
    }

    std::string get_string(const std::string& key) const {
        const Scalar& s = scalar(key);
        if (auto* v = std::get_if<std::string>(&s)) return *v;
        throw ConfigError("key '" + key + "' is not a string");
    }

    std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
        return has(key) ? get_int(key) : dflt;
    }
    double get_double(const std::string& key, double dflt) const {
        return has(key) ? get_double(key) : dflt;
    }
    bool get_bool(const std::string& key, bool dflt) const {
        return has(key) ? get_bool(key) : dflt;
    }
    std::string get_string(const std::string& key, const std::string& dflt) const {
        return has(key) ? get_string(key) : dflt;
    }

    std::vector<double> get_double_array(const std::string& key) const {
        std::vector<double> out;
        for (const Scalar& s : array(key)) {
            if (auto* v = std::get_if<double>(&s)) out.push_back(*v);
            else if (auto* v2 = std::get_if<std::int64_t>(&s)) out.push_back(static_cast<double>(*v2));
            else throw ConfigError("key '" + key + "' is not a numeric array");
        }
        return out;
    }

    std::vector<std::int64_t> get_int_array(const std::string& key) const {
        std::vector<std::int64_t> out;
        for (const Scalar& s : array(key)) {
            if (auto* v = std::get_if<std::int64_t>(&s)) out.push_back(*v);
            else throw ConfigError("key '" + key + "' is not an integer array");
        }
        return out;
    }

    std::vector<std::string> get_string_array(const std::string& key) const {
        std::vector<std::string> out;
        for (const Scalar& s : array(key)) {
            if (auto* v = std::get_if<std::string>(&s)) out.push_back(*v);
            else throw ConfigError("key '" + key + "' is not a string array");
        }
        return out;
    }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& kv : values_) out.push_back(kv.first);
        return out;
    }

private:
    std::map<std::string, Value> values_;

    [[noreturn]] static void fail(int lineno, const std::string& msg) {
        throw ConfigError("config line " + std::to_string(lineno) + ": " + msg);
    }

    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    static std::string strip_comment(const std::string& line, int lineno) {
        bool in_string = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            char c = line[i];
            if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
            else if (c == '#' && !in_string) return line.substr(0, i);
        }
        if (in_string) fail(lineno, "unterminated string");
        return line;
    }

    const Scalar& scalar(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
        if (auto* s = std::get_if<Scalar>(&it->second)) return *s;
        throw ConfigError("key '" + key + "' is an array, scalar expected");
    }

    const std::vector<Scalar>& array(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
        if (auto* a = std::get_if<std::vector<Scalar>>(&it->second)) return *a;
        throw ConfigError("key '" + key + "' is a scalar, array expected");
    }

    static Scalar parse_scalar(const std::string& raw, int lineno) {
        if (raw.front() == '"') {
            if (raw.size() < 2 || raw.back() != '"') fail(lineno, "malformed string");
            std::string out;
            for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
                if (raw[i] == '\\') {
                    if (i + 2 >= raw.size()) fail(lineno, "dangling escape");
                    char e = raw[++i];
                    switch (e) {
                        case 'n': out += '\n'; break;
                        case 't': out += '\t'; break;
                        case '"': out += '"'; break;
                        case '\\': out += '\\'; break;
                        default: fail(lineno, "unsupported escape");
                    }
                } else {
                    out += raw[i];
                }
            }
            return out;
        }
        if (raw == "true") return true;
        if (raw == "false") return false;
        bool is_int = true;
        for (std::size_t i = 0; i < raw.size(); ++i) {
            char c = raw[i];
            if (i == 0 && (c == '+' || c == '-')) continue;
            if (!std::isdigit(static_cast<unsigned char>(c))) { is_int = false; break; }
        }
        try {
            std::size_t used = 0;
            if (is_int) {
                std::int64_t v = std::stoll(raw, &used);
                if (used == raw.size()) return v;
            } else {
                double v = std::stod(raw, &used);
                if (used == raw.size()) return v;
            }
        } catch (const std::exception&) {
        }
        fail(lineno, "cannot parse value '" + raw + "'");
    }

    static Value parse_value(const std::string& raw, int lineno) {
        if (raw.front() != '[') return parse_scalar(raw, lineno);
        if (raw.back() != ']') fail(lineno, "malformed array");
        std::vector<Scalar> out;
        std::string body = raw.substr(1, raw.size() - 2);
        std::string item;
        bool in_string = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
            char c = body[i];
            if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_string = !in_string;
            if (c == ',' && !in_string) {
                std::string t = trim(item);
                if (t.empty()) fail(lineno, "empty array element");
                out.push_back(parse_scalar(t, lineno));
                item.clear();
            } else {
                item += c;
            }
        }
        std::string t = trim(item);
        if (!t.empty()) out.push_back(parse_scalar(t, lineno));
        else if (!out.empty()) fail(lineno, "trailing comma in array");
        return out;
    }
};

} // namespace reclink

#endif
