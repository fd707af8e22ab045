#include "capmfg/units.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "capmfg/error.hpp"

namespace capmfg::units {

Dimension Dimension::operator*(const Dimension& o) const {
    Dimension d;
    for (std::size_t i = 0; i < exponent.size(); ++i) d.exponent[i] = exponent[i] + o.exponent[i];
    return d;
}

Dimension Dimension::operator/(const Dimension& o) const { return *this * o.pow(-1.0); }

Dimension Dimension::pow(double p) const {
    Dimension d;
    for (std::size_t i = 0; i < exponent.size(); ++i) d.exponent[i] = exponent[i] * p;
    return d;
}

std::string Dimension::describe() const {
    static constexpr std::array<const char*, 4> names{"$", "MW", "year", "hour"};
    std::ostringstream os;
    bool first = true;
    for (std::size_t i = 0; i < exponent.size(); ++i) {
        if (exponent[i] == 0.0) continue;
        if (!first) os << '*';
        os << names[i];
        if (exponent[i] != 1.0) os << '^' << exponent[i];
        first = false;
    }
    return first ? std::string("1") : os.str();
}

namespace {

const std::map<std::string, Quantity, std::less<>>& atoms() {
    static const std::map<std::string, Quantity, std::less<>> table = {
        {"1", {1.0, kNone}},
        {"$", {1.0, kMoney}},
        {"k$", {1e3, kMoney}},
        {"kW", {1e-3, kPower}},
        {"MW", {1.0, kPower}},
        {"GW", {1e3, kPower}},
        {"year", {1.0, kYear}},
        {"years", {1.0, kYear}},
        {"yr", {1.0, kYear}},
        {"h", {1.0, kHour}},
        {"hour", {1.0, kHour}},
        {"hours", {1.0, kHour}},
        {"kWh", {1e-3, kPower * kHour}},
        {"MWh", {1.0, kPower * kHour}},
        {"GWh", {1e3, kPower * kHour}},
    };
    return table;
}

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    Quantity run() {
        Quantity q = expression();
        skip_space();
        if (pos_ != text_.size()) error("unexpected trailing input");
        return q;
    }

private:
    Quantity expression() {
        Quantity q = term();
        for (;;) {
            skip_space();
            if (consume('*')) {
                Quantity rhs = term();
                q = {q.scale * rhs.scale, q.dim * rhs.dim};
            } else if (consume('/')) {
                Quantity rhs = term();
                q = {q.scale / rhs.scale, q.dim / rhs.dim};
            } else {
                return q;
            }
        }
    }

    Quantity term() {
        Quantity q = factor();
        skip_space();
        if (consume('^')) {
            double p = number();
            q = {std::pow(q.scale, p), q.dim.pow(p)};
        }
        return q;
    }

    Quantity factor() {
        skip_space();
        if (consume('(')) {
            Quantity q = expression();
            skip_space();
            if (!consume(')')) error("missing ')'");
            return q;
        }
        std::string_view word = identifier();
        if (word == "sqrt") {
            skip_space();
            if (!consume('(')) error("expected '(' after sqrt");
            Quantity q = expression();
            skip_space();
            if (!consume(')')) error("missing ')'");
            return {std::sqrt(q.scale), q.dim.pow(0.5)};
        }
        auto it = atoms().find(word);
        if (it == atoms().end()) error("unknown unit '" + std::string(word) + "'");
        return it->second;
    }

    std::string_view identifier() {
        std::size_t start = pos_;
        while (pos_ < text_.size()) {
            char ch = text_[pos_];
            if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '$') {
                ++pos_;
            } else {
                break;
            }
        }
        if (start == pos_) error("expected a unit");
        return text_.substr(start, pos_ - start);
    }

    double number() {
        skip_space();
        bool paren = consume('(');
        std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.' ||
                text_[pos_] == '-' || text_[pos_] == '+')) {
            ++pos_;
        }
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
        if (ec != std::errc() || ptr != text_.data() + pos_) error("bad exponent");
        if (paren) {
            // "year^(-1/2)" style rational exponents
            skip_space();
            if (consume('/')) {
                double den = number();
                value /= den;
            }
            skip_space();
            if (!consume(')')) error("missing ')'");
        }
        return value;
    }

    bool consume(char ch) {
        if (pos_ < text_.size() && text_[pos_] == ch) {
            ++pos_;
            return true;
        }
        return false;
    }

    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    [[noreturn]] void error(const std::string& what) const {
        fail(ErrorKind::validation,
             "unit expression '" + std::string(text_) + "': " + what);
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

}  // namespace

Quantity parse(std::string_view expr) { return Parser(expr).run(); }

}  // namespace capmfg::units
