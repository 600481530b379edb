#include "ctxr/flow.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>

namespace ctxr {

namespace {

bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

const char* agg_name(AggFn fn) {
  switch (fn) {
    case AggFn::Avg: return "avg";
    case AggFn::Sum: return "sum";
    case AggFn::Count: return "count";
    case AggFn::Min: return "min";
    case AggFn::Max: return "max";
  }
  return "?";
}

}  // namespace

// ---------------------------------------------------------------------------
// Expression evaluation

namespace {

ExprResult err() { return {Value::null(), true}; }
ExprResult ok(Value v) { return {std::move(v), false}; }

// Total order used by sort and min/max. Families keep mixed-type streams
// sortable; nulls and missing keys are handled by the caller.
int family_of(const Value& v) {
  if (v.is_numeric()) return 0;
  if (v.is_string()) return 1;
  if (v.is_bool()) return 2;
  if (v.is_time()) return 3;
  if (v.is_array()) return 4;
  return 5;
}

int compare_values(const Value& a, const Value& b) {
  int fa = family_of(a), fb = family_of(b);
  if (fa != fb) return fa < fb ? -1 : 1;
  switch (fa) {
    case 0: {
      if (a.is_int() && b.is_int()) {
        int64_t x = a.as_int(), y = b.as_int();
        return x < y ? -1 : x > y ? 1 : 0;
      }
      double x = a.as_number(), y = b.as_number();
      return x < y ? -1 : x > y ? 1 : 0;
    }
    case 1: return a.as_string().compare(b.as_string()) < 0   ? -1
                   : a.as_string().compare(b.as_string()) > 0 ? 1
                                                              : 0;
    case 2: return int(a.as_bool()) - int(b.as_bool());
    case 3: {
      auto x = a.as_time().ns, y = b.as_time().ns;
      return x < y ? -1 : x > y ? 1 : 0;
    }
    default: {
      std::string x = serialize_value(a), y = serialize_value(b);
      return x < y ? -1 : x > y ? 1 : 0;
    }
  }
}

}  // namespace

ExprResult eval_expr(const Expr& e, const TypedRecord& rec) {
  using namespace std;
  const auto& node = e.node();
  if (auto* f = get_if<Expr::FieldRef>(&node)) {
    const Value* v = rec.find(f->name);
    return ok(v ? *v : Value::null());
  }
  if (auto* l = get_if<Expr::Literal>(&node)) return ok(l->value);
  if (auto* h = get_if<Expr::HasField>(&node))
    return ok(Value::boolean(rec.find(h->name) != nullptr));
  if (auto* h = get_if<Expr::HasType>(&node)) {
    const DataType* t = rec.type_of(h->name);
    return ok(Value::boolean(t != nullptr && *t == h->type));
  }
  const auto& b = get<Expr::Binary>(node);
  ExprResult l = eval_expr(*b.lhs, rec);
  if (l.error) return err();
  ExprResult r = eval_expr(*b.rhs, rec);
  if (r.error) return err();
  const Value& lv = l.value;
  const Value& rv = r.value;

  switch (b.op) {
    case Expr::Op::Add:
    case Expr::Op::Sub:
    case Expr::Op::Mul:
    case Expr::Op::Div: {
      if (lv.is_null() || rv.is_null()) return ok(Value::null());
      if (!lv.is_numeric() || !rv.is_numeric()) return err();
      if (b.op == Expr::Op::Div) {
        double d = rv.as_number();
        if (d == 0.0) return ok(Value::null());
        double q = lv.as_number() / d;
        return std::isfinite(q) ? ok(Value::floating(q)) : ok(Value::null());
      }
      if (lv.is_int() && rv.is_int()) {
        int64_t x = lv.as_int(), y = rv.as_int();
        int64_t out = 0;
        bool of = b.op == Expr::Op::Add   ? __builtin_add_overflow(x, y, &out)
                  : b.op == Expr::Op::Sub ? __builtin_sub_overflow(x, y, &out)
                                          : __builtin_mul_overflow(x, y, &out);
        if (of) return ok(Value::null());
        return ok(Value::integer(out));
      }
      double x = lv.as_number(), y = rv.as_number();
      double out = b.op == Expr::Op::Add   ? x + y
                   : b.op == Expr::Op::Sub ? x - y
                                           : x * y;
      return std::isfinite(out) ? ok(Value::floating(out)) : ok(Value::null());
    }
    case Expr::Op::Eq:
    case Expr::Op::Ne: {
      bool eq;
      if (lv.is_null() || rv.is_null()) {
        eq = lv.is_null() && rv.is_null();
      } else if (lv.is_numeric() && rv.is_numeric()) {
        eq = compare_values(lv, rv) == 0;
      } else if (family_of(lv) != family_of(rv)) {
        eq = false;
      } else {
        eq = lv == rv;
      }
      return ok(Value::boolean(b.op == Expr::Op::Eq ? eq : !eq));
    }
    case Expr::Op::Lt:
    case Expr::Op::Le:
    case Expr::Op::Gt:
    case Expr::Op::Ge: {
      if (lv.is_null() || rv.is_null()) return ok(Value::null());
      if (family_of(lv) != family_of(rv) || family_of(lv) > 3) return err();
      int c = compare_values(lv, rv);
      bool out = b.op == Expr::Op::Lt   ? c < 0
                 : b.op == Expr::Op::Le ? c <= 0
                 : b.op == Expr::Op::Gt ? c > 0
                                        : c >= 0;
      return ok(Value::boolean(out));
    }
    case Expr::Op::And:
    case Expr::Op::Or: {
      auto as_tri = [](const Value& v, int& out) {
        if (v.is_null()) { out = -1; return true; }
        if (v.is_bool()) { out = v.as_bool() ? 1 : 0; return true; }
        return false;
      };
      int x, y;
      if (!as_tri(lv, x) || !as_tri(rv, y)) return err();
      if (b.op == Expr::Op::And) {
        if (x == 0 || y == 0) return ok(Value::boolean(false));
        if (x == -1 || y == -1) return ok(Value::null());
        return ok(Value::boolean(true));
      }
      if (x == 1 || y == 1) return ok(Value::boolean(true));
      if (x == -1 || y == -1) return ok(Value::null());
      return ok(Value::boolean(false));
    }
  }
  return err();
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

const char* op_name(Expr::Op op) {
  switch (op) {
    case Expr::Op::Add: return "+";
    case Expr::Op::Sub: return "-";
    case Expr::Op::Mul: return "*";
    case Expr::Op::Div: return "/";
    case Expr::Op::Eq: return "==";
    case Expr::Op::Ne: return "!=";
    case Expr::Op::Lt: return "<";
    case Expr::Op::Le: return "<=";
    case Expr::Op::Gt: return ">";
    case Expr::Op::Ge: return ">=";
    case Expr::Op::And: return "and";
    case Expr::Op::Or: return "or";
  }
  return "?";
}

std::string quoted(const std::string& s) {
  return serialize_value(Value::string(s));
}

}  // namespace

std::string Expr::to_string() const {
  if (auto* f = std::get_if<FieldRef>(&node_)) return f->name;
  if (auto* l = std::get_if<Literal>(&node_)) return serialize_value(l->value);
  if (auto* h = std::get_if<HasField>(&node_)) return "has(" + h->name + ")";
  if (auto* h = std::get_if<HasType>(&node_))
    return "has(<" + h->name + ":" + h->type.to_string() + ">)";
  const auto& b = std::get<Binary>(node_);
  return "(" + b.lhs->to_string() + " " + op_name(b.op) + " " +
         b.rhs->to_string() + ")";
}

std::string TypeSpec::to_string() const {
  std::string out = "<{";
  for (size_t i = 0; i < fields.size(); i++) {
    if (i) out += ',';
    out += fields[i].first + ":" + fields[i].second.to_string();
  }
  return out + "}>";
}

std::string stage_to_string(const Stage& s) {
  using namespace stage;
  if (auto* w = std::get_if<Where>(&s)) return "where " + w->expr.to_string();
  if (auto* h = std::get_if<Head>(&s)) return "head " + std::to_string(h->n);
  if (auto* so = std::get_if<Sort>(&s))
    return std::string("sort ") + (so->descending ? "-r " : "") + so->field;
  if (auto* c = std::get_if<Cut>(&s)) {
    std::string out = "cut ";
    for (size_t i = 0; i < c->fields.size(); i++)
      out += (i ? "," : "") + c->fields[i];
    return out;
  }
  if (auto* r = std::get_if<Rename>(&s)) {
    std::string out = "rename ";
    for (size_t i = 0; i < r->pairs.size(); i++) {
      if (i) out += ',';
      out += r->pairs[i].first + ":=" + r->pairs[i].second;
    }
    return out;
  }
  if (auto* p = std::get_if<Put>(&s))
    return "put " + p->field + " := " + p->expr.to_string();
  if (auto* sh = std::get_if<Shape>(&s))
    return "shape(this, " + sh->spec.to_string() + ")";
  if (auto* a = std::get_if<Aggregate>(&s)) {
    std::string out;
    for (size_t i = 0; i < a->aggs.size(); i++) {
      if (i) out += ',';
      const auto& g = a->aggs[i];
      out += std::string(agg_name(g.fn)) + "(" + g.input + ")";
    }
    if (!a->group_by.empty()) {
      out += " by ";
      for (size_t i = 0; i < a->group_by.size(); i++)
        out += (i ? "," : "") + a->group_by[i];
    }
    return out;
  }
  if (auto* l = std::get_if<LogSink>(&s)) return "log(" + quoted(l->label) + ")";
  const auto& d = std::get<DropAll>(s);
  return (d.log ? "reject(" : "drop(") + quoted(d.reason) + ")";
}

std::string Pipeline::to_string() const {
  std::string out;
  for (size_t i = 0; i < stages_.size(); i++) {
    if (i) out += " | ";
    out += stage_to_string(stages_[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

struct FlowParser {
  std::string_view s;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) { throw parse_error(msg, pos); }

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\n' ||
                              s[pos] == '\r'))
      pos++;
  }
  char peek() {
    skip_ws();
    return pos < s.size() ? s[pos] : '\0';
  }
  bool eof() {
    skip_ws();
    return pos >= s.size();
  }
  bool accept(char c) {
    if (peek() == c) {
      pos++;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }
  bool accept_word(std::string_view w) {
    skip_ws();
    if (s.substr(pos, w.size()) == w &&
        (pos + w.size() >= s.size() || !is_ident_char(s[pos + w.size()]))) {
      pos += w.size();
      return true;
    }
    return false;
  }

  std::string ident() {
    skip_ws();
    if (pos >= s.size() || !is_ident_start(s[pos])) fail("expected identifier");
    size_t start = pos;
    while (pos < s.size() && is_ident_char(s[pos])) pos++;
    return std::string(s.substr(start, pos - start));
  }

  std::string peek_ident() {
    skip_ws();
    size_t save = pos;
    if (pos >= s.size() || !is_ident_start(s[pos])) return {};
    std::string w = ident();
    pos = save;
    return w;
  }

  std::string string_literal() {
    skip_ws();
    size_t start = pos;
    if (peek() != '"') fail("expected string");
    // Reuse the record grammar: wrap as a one-field record.
    size_t depth = 0;
    (void)depth;
    // Scan to closing quote honoring escapes.
    pos++;
    std::string raw = "\"";
    while (pos < s.size()) {
      char c = s[pos++];
      raw += c;
      if (c == '\\') {
        if (pos < s.size()) raw += s[pos++];
        continue;
      }
      if (c == '"') break;
    }
    auto rec = parse_text("{s:" + raw + "}");
    (void)start;
    return rec.find("s")->as_string();
  }

  DataType type_name() {
    std::string w = ident();
    if (w == "int64") return DataType::scalar(TypeKind::Int64);
    if (w == "float64") return DataType::scalar(TypeKind::Float64);
    if (w == "string") return DataType::scalar(TypeKind::String);
    if (w == "bool") return DataType::scalar(TypeKind::Bool);
    if (w == "time") return DataType::scalar(TypeKind::Time);
    pos -= w.size();
    fail("unknown type '" + w + "'");
  }

  Value number_or_time_literal() {
    skip_ws();
    size_t start = pos;
    bool neg = false;
    if (pos < s.size() && s[pos] == '-') {
      neg = true;
      pos++;
    }
    size_t dstart = pos;
    while (pos < s.size() && is_digit(s[pos])) pos++;
    if (pos == dstart) fail("expected number");
    if (!neg && pos - dstart == 4 && pos < s.size() && s[pos] == '-') {
      while (pos < s.size() &&
             (is_digit(s[pos]) || s[pos] == '-' || s[pos] == ':' ||
              s[pos] == '.' || s[pos] == 'T' || s[pos] == 'Z' || s[pos] == '+'))
        pos++;
      auto t = parse_rfc3339(s.substr(start, pos - start));
      if (!t) {
        pos = start;
        fail("invalid timestamp literal");
      }
      return Value::time(*t);
    }
    bool is_float = false;
    if (pos < s.size() && s[pos] == '.') {
      is_float = true;
      pos++;
      while (pos < s.size() && is_digit(s[pos])) pos++;
    }
    if (pos < s.size() && (s[pos] == 'e' || s[pos] == 'E')) {
      is_float = true;
      pos++;
      if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) pos++;
      while (pos < s.size() && is_digit(s[pos])) pos++;
    }
    std::string tok(s.substr(start, pos - start));
    if (is_float) return Value::floating(std::stod(tok));
    try {
      return Value::integer(std::stoll(tok));
    } catch (...) {
      fail("integer literal out of range");
    }
  }

  std::shared_ptr<const Expr> make(Expr::Node n) {
    return std::make_shared<const Expr>(std::move(n));
  }

  std::shared_ptr<const Expr> primary() {
    skip_ws();
    if (accept('(')) {
      auto e = or_expr();
      expect(')');
      return e;
    }
    char c = peek();
    if (c == '"') return make(Expr::Literal{Value::string(string_literal())});
    if (c == '-' || is_digit(c))
      return make(Expr::Literal{number_or_time_literal()});
    std::string w = peek_ident();
    if (w.empty()) fail("expected expression");
    if (w == "true" || w == "false") {
      ident();
      return make(Expr::Literal{Value::boolean(w == "true")});
    }
    if (w == "null") {
      ident();
      return make(Expr::Literal{Value::null()});
    }
    if (w == "has") {
      ident();
      expect('(');
      if (accept('<')) {
        std::string f = ident();
        expect(':');
        DataType t = type_name();
        expect('>');
        expect(')');
        return make(Expr::HasType{std::move(f), std::move(t)});
      }
      std::string f = ident();
      expect(')');
      return make(Expr::HasField{std::move(f)});
    }
    return make(Expr::FieldRef{ident()});
  }

  std::shared_ptr<const Expr> mul_expr() {
    auto lhs = primary();
    while (true) {
      skip_ws();
      if (accept('*')) {
        lhs = make(Expr::Binary{Expr::Op::Mul, lhs, primary()});
      } else if (peek() == '/' ) {
        pos++;
        lhs = make(Expr::Binary{Expr::Op::Div, lhs, primary()});
      } else {
        return lhs;
      }
    }
  }

  std::shared_ptr<const Expr> add_expr() {
    auto lhs = mul_expr();
    while (true) {
      skip_ws();
      if (accept('+')) {
        lhs = make(Expr::Binary{Expr::Op::Add, lhs, mul_expr()});
      } else if (peek() == '-') {
        pos++;
        lhs = make(Expr::Binary{Expr::Op::Sub, lhs, mul_expr()});
      } else {
        return lhs;
      }
    }
  }

  std::shared_ptr<const Expr> cmp_expr() {
    auto lhs = add_expr();
    skip_ws();
    Expr::Op op;
    if (s.substr(pos, 2) == "==") { op = Expr::Op::Eq; pos += 2; }
    else if (s.substr(pos, 2) == "!=") { op = Expr::Op::Ne; pos += 2; }
    else if (s.substr(pos, 2) == "<=") { op = Expr::Op::Le; pos += 2; }
    else if (s.substr(pos, 2) == ">=") { op = Expr::Op::Ge; pos += 2; }
    else if (pos < s.size() && s[pos] == '<') { op = Expr::Op::Lt; pos += 1; }
    else if (pos < s.size() && s[pos] == '>') { op = Expr::Op::Gt; pos += 1; }
    else return lhs;
    return make(Expr::Binary{op, lhs, add_expr()});
  }

  std::shared_ptr<const Expr> and_expr() {
    auto lhs = cmp_expr();
    while (accept_word("and"))
      lhs = make(Expr::Binary{Expr::Op::And, lhs, cmp_expr()});
    return lhs;
  }

  std::shared_ptr<const Expr> or_expr() {
    auto lhs = and_expr();
    while (accept_word("or"))
      lhs = make(Expr::Binary{Expr::Op::Or, lhs, and_expr()});
    return lhs;
  }

  Expr expression() { return *or_expr(); }

  TypeSpec typespec() {
    skip_ws();
    expect('<');
    expect('{');
    TypeSpec spec;
    while (true) {
      std::string f = ident();
      expect(':');
      DataType t = type_name();
      for (const auto& [n, _] : spec.fields)
        if (n == f) fail("duplicate field in typespec: " + f);
      spec.fields.emplace_back(std::move(f), std::move(t));
      if (accept(',')) continue;
      expect('}');
      expect('>');
      return spec;
    }
  }

  std::optional<AggFn> agg_fn(const std::string& w) {
    if (w == "avg") return AggFn::Avg;
    if (w == "sum") return AggFn::Sum;
    if (w == "min") return AggFn::Min;
    if (w == "max") return AggFn::Max;
    if (w == "count") return AggFn::Count;
    return std::nullopt;
  }

  Stage aggregate_stage() {
    stage::Aggregate agg;
    while (true) {
      std::string w = ident();
      auto fn = agg_fn(w);
      if (!fn) fail("expected aggregate function");
      expect('(');
      AggSpec spec;
      spec.fn = *fn;
      spec.output = agg_name(*fn);
      if (*fn == AggFn::Count) {
        expect(')');
      } else {
        spec.input = ident();
        expect(')');
      }
      for (const auto& existing : agg.aggs)
        if (existing.output == spec.output)
          fail("duplicate aggregate output '" + spec.output + "'");
      agg.aggs.push_back(std::move(spec));
      if (accept(',')) continue;
      break;
    }
    if (accept_word("by")) {
      while (true) {
        agg.group_by.push_back(ident());
        if (!accept(',')) break;
      }
    }
    return agg;
  }

  Stage parse_stage() {
    std::string w = peek_ident();
    if (w.empty()) fail("expected stage");
    if (w == "where") {
      ident();
      return stage::Where{expression()};
    }
    if (w == "head") {
      ident();
      skip_ws();
      if (pos < s.size() && is_digit(s[pos])) {
        Value n = number_or_time_literal();
        if (!n.is_int() || n.as_int() <= 0) fail("head takes a positive int");
        return stage::Head{n.as_int()};
      }
      return stage::Head{1};
    }
    if (w == "sort") {
      ident();
      skip_ws();
      bool desc = false;
      if (pos + 1 < s.size() && s[pos] == '-' && s[pos + 1] == 'r' &&
          (pos + 2 >= s.size() || !is_ident_char(s[pos + 2]))) {
        desc = true;
        pos += 2;
      }
      return stage::Sort{ident(), desc};
    }
    if (w == "cut") {
      ident();
      stage::Cut cut;
      while (true) {
        cut.fields.push_back(ident());
        if (!accept(',')) break;
      }
      return cut;
    }
    if (w == "rename") {
      ident();
      stage::Rename rn;
      while (true) {
        std::string to = ident();
        skip_ws();
        if (s.substr(pos, 2) != ":=") fail("expected ':='");
        pos += 2;
        std::string from = ident();
        for (const auto& [t, _] : rn.pairs)
          if (t == to) fail("duplicate rename target '" + to + "'");
        rn.pairs.emplace_back(std::move(to), std::move(from));
        if (!accept(',')) break;
      }
      return rn;
    }
    if (w == "put") {
      ident();
      std::string f = ident();
      skip_ws();
      if (s.substr(pos, 2) != ":=") fail("expected ':='");
      pos += 2;
      return stage::Put{std::move(f), expression()};
    }
    if (w == "shape") {
      ident();
      expect('(');
      if (!accept_word("this")) fail("expected 'this'");
      expect(',');
      TypeSpec spec = typespec();
      expect(')');
      return stage::Shape{std::move(spec)};
    }
    if (w == "log") {
      ident();
      expect('(');
      std::string label = string_literal();
      expect(')');
      return stage::LogSink{std::move(label)};
    }
    if (w == "reject" || w == "drop") {
      ident();
      expect('(');
      std::string reason = string_literal();
      expect(')');
      return stage::DropAll{std::move(reason), w == "reject"};
    }
    if (agg_fn(w)) return aggregate_stage();
    fail("unknown operator '" + w + "'");
  }

  std::vector<Stage> parse_pipeline() {
    std::vector<Stage> stages;
    if (eof()) return stages;
    while (true) {
      stages.push_back(parse_stage());
      if (eof()) break;
      expect('|');
      if (eof()) fail("trailing '|'");
    }
    for (size_t i = 0; i < stages.size(); i++) {
      if (std::holds_alternative<stage::Aggregate>(stages[i]) &&
          i + 1 != stages.size())
        fail("aggregate must be the terminal stage");
    }
    return stages;
  }
};

}  // namespace

Pipeline::Pipeline(std::vector<Stage> stages) : stages_(std::move(stages)) {
  int aggs = 0;
  for (const auto& s : stages_)
    if (std::holds_alternative<stage::Aggregate>(s)) aggs++;
  if (aggs > 1 || (aggs == 1 && !std::holds_alternative<stage::Aggregate>(
                                    stages_.back())))
    throw std::invalid_argument("aggregate must be the single terminal stage");
  for (const auto& s : stages_) {
    if (auto* c = std::get_if<stage::Cut>(&s)) {
      if (c->fields.empty()) throw std::invalid_argument("empty cut list");
    }
  }
}

Pipeline Pipeline::parse(std::string_view text) {
  FlowParser p{text};
  return Pipeline(p.parse_pipeline());
}

bool Pipeline::has_aggregate() const {
  return !stages_.empty() &&
         std::holds_alternative<stage::Aggregate>(stages_.back());
}

bool Pipeline::order_sensitive() const {
  for (const auto& s : stages_) {
    if (std::holds_alternative<stage::Head>(s) ||
        std::holds_alternative<stage::Sort>(s))
      return true;
  }
  return false;
}

bool Pipeline::stateful() const {
  if (has_aggregate()) return true;
  for (const auto& s : stages_) {
    if (std::holds_alternative<stage::Head>(s)) return true;
  }
  return false;
}

bool Pipeline::record_local() const {
  for (const auto& s : stages_) {
    if (std::holds_alternative<stage::Head>(s) ||
        std::holds_alternative<stage::Sort>(s) ||
        std::holds_alternative<stage::Aggregate>(s))
      return false;
  }
  return true;
}

int Pipeline::operator_count() const {
  int n = 0;
  for (const auto& s : stages_) {
    if (auto* a = std::get_if<stage::Aggregate>(&s))
      n += int(a->aggs.size());
    else
      n += 1;
  }
  return n;
}

int qcx(const std::vector<std::string>& targets, const Pipeline& p) {
  return int(targets.size()) * 2 + p.operator_count();
}

void EvalReport::merge(const EvalReport& other) {
  rejected += other.rejected;
  for (const auto& [k, v] : other.rejects_by_reason) rejects_by_reason[k] += v;
  logged.insert(logged.end(), other.logged.begin(), other.logged.end());
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct AggAcc {
  uint64_t records = 0;    // all records (count())
  uint64_t n = 0;          // usable inputs
  int64_t sum_i = 0;
  double sum_d = 0;
  bool all_int = true;
  std::optional<Value> min_v, max_v;

  void add(const Value* v, AggFn fn) {
    records++;
    if (fn == AggFn::Count) return;
    if (!v || v->is_null()) return;  // aggregates skip nulls
    switch (fn) {
      case AggFn::Avg:
      case AggFn::Sum:
        if (!v->is_numeric()) return;
        if (v->is_int() && all_int) {
          if (__builtin_add_overflow(sum_i, v->as_int(), &sum_i)) {
            all_int = false;
            sum_d += double(v->as_int());
          }
        } else {
          if (all_int) {
            sum_d += double(sum_i);
            all_int = false;
          }
          sum_d += v->as_number();
        }
        n++;
        break;
      case AggFn::Min:
      case AggFn::Max: {
        if (family_of(*v) > 3) return;
        std::optional<Value>& slot = fn == AggFn::Min ? min_v : max_v;
        if (!slot) {
          slot = *v;
        } else if (family_of(*v) == family_of(*slot)) {
          int c = compare_values(*v, *slot);
          if ((fn == AggFn::Min && c < 0) || (fn == AggFn::Max && c > 0))
            slot = *v;
        }
        n++;
        break;
      }
      case AggFn::Count:
        break;
    }
  }

  Value result(AggFn fn) const {
    switch (fn) {
      case AggFn::Count:
        return Value::integer(int64_t(records));
      case AggFn::Sum:
        if (n == 0) return Value::null();
        return all_int ? Value::integer(sum_i) : Value::floating(sum_d);
      case AggFn::Avg: {
        if (n == 0) return Value::null();
        double total = all_int ? double(sum_i) : sum_d;
        return Value::floating(total / double(n));
      }
      case AggFn::Min:
        return min_v ? *min_v : Value::null();
      case AggFn::Max:
        return max_v ? *max_v : Value::null();
    }
    return Value::null();
  }
};

struct GroupState {
  // Insertion-ordered groups; key is the serialized group value tuple.
  std::vector<std::pair<std::string, size_t>> order;
  std::map<std::string, size_t> index;
  struct Group {
    std::vector<Value> key_values;
    std::vector<AggAcc> accs;
  };
  std::vector<Group> groups;
  uint64_t total_records = 0;

  Group& group_for(const TypedRecord& rec, const stage::Aggregate& spec) {
    std::vector<Value> key;
    std::string key_str;
    for (const auto& f : spec.group_by) {
      const Value* v = rec.find(f);
      key.push_back(v ? *v : Value::null());
      key_str += serialize_value(key.back());
      key_str += '\x1f';
    }
    auto it = index.find(key_str);
    if (it != index.end()) return groups[it->second];
    index[key_str] = groups.size();
    groups.push_back(Group{std::move(key), std::vector<AggAcc>(spec.aggs.size())});
    return groups.back();
  }

  void add(const TypedRecord& rec, const stage::Aggregate& spec) {
    total_records++;
    Group& g = group_for(rec, spec);
    for (size_t i = 0; i < spec.aggs.size(); i++)
      g.accs[i].add(rec.find(spec.aggs[i].input), spec.aggs[i].fn);
  }

  std::vector<TypedRecord> snapshot(const stage::Aggregate& spec) const {
    std::vector<TypedRecord> out;
    for (const auto& g : groups) {
      std::vector<std::pair<std::string, Value>> fields;
      for (size_t i = 0; i < spec.group_by.size(); i++)
        fields.emplace_back(spec.group_by[i], g.key_values[i]);
      for (size_t i = 0; i < spec.aggs.size(); i++)
        fields.emplace_back(spec.aggs[i].output, g.accs[i].result(spec.aggs[i].fn));
      out.push_back(TypedRecord::make(std::move(fields)));
    }
    return out;
  }
};

// Applies one stateless stage to one record. Returns true when the record
// survives (possibly modified); false when filtered or rejected. Rejected
// records are counted by reason and captured in the log so pipelets can
// route them to the errors branch.
bool apply_record_stage(const Stage& s, TypedRecord& rec, EvalReport& report) {
  using namespace stage;
  auto reject = [&](const char* reason) {
    report.rejected++;
    report.rejects_by_reason[reason]++;
    report.logged.emplace_back(reason, rec);
    return false;
  };
  if (auto* w = std::get_if<Where>(&s)) {
    ExprResult r = eval_expr(w->expr, rec);
    if (r.error) return reject("where-type-error");
    if (r.value.is_bool()) return r.value.as_bool();
    if (r.value.is_null()) return false;
    return reject("where-not-bool");
  }
  if (auto* c = std::get_if<Cut>(&s)) {
    std::vector<std::pair<std::string, DataType>> fields;
    std::vector<Value> values;
    for (const auto& f : c->fields) {
      auto idx = rec.schema().index_of(f);
      if (!idx) return reject("cut-missing-field");
      fields.emplace_back(f, rec.schema().fields()[*idx].second);
      values.push_back(rec.values()[*idx]);
    }
    rec = TypedRecord(Schema(std::move(fields)), std::move(values));
    return true;
  }
  if (auto* r = std::get_if<Rename>(&s)) {
    auto fields = rec.schema().fields();
    for (const auto& [to, from] : r->pairs) {
      size_t src_idx = fields.size();
      for (size_t i = 0; i < fields.size(); i++) {
        if (fields[i].first == from) {
          src_idx = i;
          break;
        }
      }
      if (src_idx == fields.size()) continue;  // absent field: no-op
      for (size_t i = 0; i < fields.size(); i++) {
        if (i != src_idx && fields[i].first == to)
          return reject("rename-collision");
      }
      fields[src_idx].first = to;
    }
    rec = TypedRecord(Schema(std::move(fields)), rec.values());
    return true;
  }
  if (auto* p = std::get_if<Put>(&s)) {
    ExprResult r = eval_expr(p->expr, rec);
    if (r.error) return reject("put-type-error");
    rec = rec.with_field(p->field, std::move(r.value));
    return true;
  }
  if (auto* sh = std::get_if<Shape>(&s)) {
    for (const auto& [f, t] : sh->spec.fields) {
      const Value* v = rec.find(f);
      if (!v) continue;  // unlisted and absent fields stay untouched
      auto cast = cast_value(*v, t);
      if (!cast) return reject("shape-unconvertible");
      rec = rec.with_field(f, std::move(*cast), t);
    }
    return true;
  }
  if (auto* l = std::get_if<LogSink>(&s)) {
    report.logged.emplace_back(l->label, rec);
    return false;
  }
  if (auto* d = std::get_if<DropAll>(&s)) {
    report.rejected++;
    report.rejects_by_reason[d->reason]++;
    if (d->log) report.logged.emplace_back(d->reason, rec);
    return false;
  }
  assert(false && "not a record stage");
  return true;
}

void sort_records(std::vector<TypedRecord>& recs, const stage::Sort& spec) {
  auto key_of = [&](const TypedRecord& r) -> const Value* {
    const Value* v = r.find(spec.field);
    return (v && !v->is_null()) ? v : nullptr;
  };
  // Keyless (missing or null) records sort after all keyed records; ties keep
  // input order via stable_sort.
  std::stable_sort(recs.begin(), recs.end(),
                   [&](const TypedRecord& a, const TypedRecord& b) {
                     const Value* ka = key_of(a);
                     const Value* kb = key_of(b);
                     if (!ka) return false;
                     if (!kb) return true;
                     int c = compare_values(*ka, *kb);
                     return spec.descending ? c > 0 : c < 0;
                   });
}

}  // namespace

struct IncrementalEval::Impl {
  Pipeline pipeline;
  std::vector<int64_t> head_emitted;  // one slot per Head stage
  std::optional<GroupState> agg_state;
  std::string last_snapshot;  // serialized; suppresses unchanged re-emits

  explicit Impl(Pipeline p) : pipeline(std::move(p)) {
    for (const auto& s : pipeline.stages())
      if (std::holds_alternative<stage::Head>(s)) head_emitted.push_back(0);
    if (pipeline.has_aggregate()) agg_state.emplace();
  }

  std::vector<TypedRecord> run(std::vector<TypedRecord> batch, EvalReport& report,
                               bool emit) {
    size_t head_slot = 0;
    size_t n_stages = pipeline.stages().size();
    size_t last = pipeline.has_aggregate() ? n_stages - 1 : n_stages;
    std::vector<TypedRecord> cur = std::move(batch);
    for (size_t si = 0; si < last; si++) {
      const Stage& s = pipeline.stages()[si];
      if (auto* so = std::get_if<stage::Sort>(&s)) {
        sort_records(cur, *so);
        continue;
      }
      if (auto* h = std::get_if<stage::Head>(&s)) {
        int64_t& emitted = head_emitted[head_slot++];
        std::vector<TypedRecord> next;
        for (auto& r : cur) {
          if (emitted >= h->n) break;
          emitted++;
          next.push_back(std::move(r));
        }
        cur = std::move(next);
        continue;
      }
      std::vector<TypedRecord> next;
      next.reserve(cur.size());
      for (auto& r : cur) {
        if (apply_record_stage(s, r, report)) next.push_back(std::move(r));
      }
      cur = std::move(next);
    }
    if (!agg_state) return cur;
    const auto& spec = std::get<stage::Aggregate>(pipeline.stages().back());
    for (const auto& r : cur) agg_state->add(r, spec);
    if (!emit) return cur;
    if (agg_state->total_records == 0) return {};
    std::vector<TypedRecord> snap = agg_state->snapshot(spec);
    std::string ser = serialize_lines(snap);
    if (ser == last_snapshot) return {};
    last_snapshot = std::move(ser);
    return snap;
  }
};

IncrementalEval::IncrementalEval(Pipeline p)
    : impl_(std::make_unique<Impl>(std::move(p))) {}
IncrementalEval::~IncrementalEval() = default;
IncrementalEval::IncrementalEval(IncrementalEval&&) noexcept = default;
IncrementalEval& IncrementalEval::operator=(IncrementalEval&&) noexcept = default;

std::vector<TypedRecord> IncrementalEval::push(std::vector<TypedRecord> batch,
                                               EvalReport* report) {
  EvalReport local;
  auto out = impl_->run(std::move(batch), report ? *report : local, true);
  return out;
}

std::vector<TypedRecord> IncrementalEval::warm(std::vector<TypedRecord> batch) {
  EvalReport sink;
  auto out = impl_->run(std::move(batch), sink, false);
  // Prime the change detector so a restart does not re-emit the last
  // snapshot for data that is already committed.
  if (impl_->agg_state && impl_->agg_state->total_records > 0) {
    const auto& spec = std::get<stage::Aggregate>(impl_->pipeline.stages().back());
    impl_->last_snapshot = serialize_lines(impl_->agg_state->snapshot(spec));
  }
  return out;
}

const Pipeline& IncrementalEval::pipeline() const { return impl_->pipeline; }

std::vector<TypedRecord> eval(const Pipeline& p, std::vector<TypedRecord> input,
                              EvalReport* report) {
  IncrementalEval inc(p);
  return inc.push(std::move(input), report);
}

std::optional<TypedRecord> apply_record_local(const Pipeline& p, TypedRecord rec,
                                              EvalReport& report) {
  assert(p.record_local());
  for (const Stage& s : p.stages()) {
    if (!apply_record_stage(s, rec, report)) return std::nullopt;
  }
  return rec;
}

}  // namespace ctxr
