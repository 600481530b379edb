#include "ctxr/record.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace ctxr {

namespace {

const char* kind_name(TypeKind k) {
  switch (k) {
    case TypeKind::Null: return "null";
    case TypeKind::Int64: return "int64";
    case TypeKind::Float64: return "float64";
    case TypeKind::String: return "string";
    case TypeKind::Bool: return "bool";
    case TypeKind::Time: return "time";
    case TypeKind::Array: return "array";
    case TypeKind::Record: return "record";
  }
  return "?";
}

bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Howard Hinnant's days-from-civil; avoids timegm.
int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

void civil_from_days(int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int64_t yy = static_cast<int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

}  // namespace

std::string format_rfc3339(Timestamp t) {
  int64_t ns = t.ns;
  int64_t secs = ns / 1000000000;
  int64_t frac = ns % 1000000000;
  if (frac < 0) {
    frac += 1000000000;
    secs -= 1;
  }
  int64_t days = secs / 86400;
  int64_t sod = secs % 86400;
  if (sod < 0) {
    sod += 86400;
    days -= 1;
  }
  int y, m, d;
  civil_from_days(days, y, m, d);
  char buf[64];
  int n = std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d", y, m,
                        d, int(sod / 3600), int(sod % 3600 / 60), int(sod % 60));
  std::string out(buf, n);
  if (frac != 0) {
    char fb[16];
    std::snprintf(fb, sizeof fb, ".%09lld", static_cast<long long>(frac));
    std::string f(fb);
    while (f.back() == '0') f.pop_back();
    out += f;
  }
  out += 'Z';
  return out;
}

std::optional<Timestamp> parse_rfc3339(std::string_view s) {
  auto num = [&](size_t pos, size_t len, int& out) -> bool {
    if (pos + len > s.size()) return false;
    int v = 0;
    for (size_t i = 0; i < len; i++) {
      if (!is_digit(s[pos + i])) return false;
      v = v * 10 + (s[pos + i] - '0');
    }
    out = v;
    return true;
  };
  int y, mo, d, h, mi, se;
  if (s.size() < 20) return std::nullopt;
  if (!num(0, 4, y) || s[4] != '-' || !num(5, 2, mo) || s[7] != '-' ||
      !num(8, 2, d))
    return std::nullopt;
  if (s[10] != 'T' && s[10] != 't') return std::nullopt;
  if (!num(11, 2, h) || s[13] != ':' || !num(14, 2, mi) || s[16] != ':' ||
      !num(17, 2, se))
    return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60)
    return std::nullopt;
  size_t pos = 19;
  int64_t frac = 0;
  if (pos < s.size() && s[pos] == '.') {
    pos++;
    size_t start = pos;
    while (pos < s.size() && is_digit(s[pos])) pos++;
    if (pos == start || pos - start > 9) return std::nullopt;
    int64_t scale = 1000000000;
    for (size_t i = start; i < pos; i++) {
      scale /= 10;
      frac += (s[i] - '0') * scale;
    }
  }
  if (pos >= s.size()) return std::nullopt;
  int64_t offset = 0;
  if (s[pos] == 'Z' || s[pos] == 'z') {
    pos++;
  } else if (s[pos] == '+' || s[pos] == '-') {
    int sign = s[pos] == '+' ? 1 : -1;
    int oh, om;
    if (!num(pos + 1, 2, oh) || pos + 3 >= s.size() || s[pos + 3] != ':' ||
        !num(pos + 4, 2, om))
      return std::nullopt;
    offset = sign * (oh * 3600 + om * 60);
    pos += 6;
  } else {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;
  int64_t secs =
      days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se - offset;
  return Timestamp{secs * 1000000000 + frac};
}

// ---------------------------------------------------------------------------
// DataType

DataType DataType::scalar(TypeKind k) {
  assert(k != TypeKind::Array && k != TypeKind::Record);
  DataType t;
  t.kind_ = k;
  return t;
}

DataType DataType::array(DataType element) {
  DataType t;
  t.kind_ = TypeKind::Array;
  auto c = std::make_shared<Compound>();
  c->element = std::make_unique<DataType>(std::move(element));
  t.compound_ = std::move(c);
  return t;
}

DataType DataType::record(std::vector<std::pair<std::string, DataType>> fields) {
  DataType t;
  t.kind_ = TypeKind::Record;
  auto c = std::make_shared<Compound>();
  c->fields = std::move(fields);
  t.compound_ = std::move(c);
  return t;
}

const DataType& DataType::element() const {
  assert(kind_ == TypeKind::Array);
  return *compound_->element;
}

const std::vector<std::pair<std::string, DataType>>& DataType::fields() const {
  assert(kind_ == TypeKind::Record);
  return compound_->fields;
}

std::string DataType::to_string() const {
  switch (kind_) {
    case TypeKind::Array:
      return "[" + element().to_string() + "]";
    case TypeKind::Record: {
      std::string out = "{";
      bool first = true;
      for (const auto& [n, t] : fields()) {
        if (!first) out += ',';
        first = false;
        out += n;
        out += ':';
        out += t.to_string();
      }
      return out + "}";
    }
    default:
      return kind_name(kind_);
  }
}

namespace {
std::optional<DataType> parse_type_at(std::string_view s, size_t& pos);

std::optional<DataType> parse_record_type(std::string_view s, size_t& pos) {
  pos++;  // '{'
  std::vector<std::pair<std::string, DataType>> fields;
  if (pos < s.size() && s[pos] == '}') {
    pos++;
    return DataType::record({});
  }
  while (true) {
    size_t start = pos;
    while (pos < s.size() && is_ident_char(s[pos])) pos++;
    if (pos == start || pos >= s.size() || s[pos] != ':') return std::nullopt;
    std::string name(s.substr(start, pos - start));
    pos++;
    auto t = parse_type_at(s, pos);
    if (!t) return std::nullopt;
    fields.emplace_back(std::move(name), std::move(*t));
    if (pos < s.size() && s[pos] == ',') {
      pos++;
      continue;
    }
    if (pos < s.size() && s[pos] == '}') {
      pos++;
      return DataType::record(std::move(fields));
    }
    return std::nullopt;
  }
}

std::optional<DataType> parse_type_at(std::string_view s, size_t& pos) {
  if (pos >= s.size()) return std::nullopt;
  if (s[pos] == '[') {
    pos++;
    auto elem = parse_type_at(s, pos);
    if (!elem || pos >= s.size() || s[pos] != ']') return std::nullopt;
    pos++;
    return DataType::array(std::move(*elem));
  }
  if (s[pos] == '{') return parse_record_type(s, pos);
  size_t start = pos;
  while (pos < s.size() && is_ident_char(s[pos])) pos++;
  std::string_view word = s.substr(start, pos - start);
  if (word == "int64") return DataType::scalar(TypeKind::Int64);
  if (word == "float64") return DataType::scalar(TypeKind::Float64);
  if (word == "string") return DataType::scalar(TypeKind::String);
  if (word == "bool") return DataType::scalar(TypeKind::Bool);
  if (word == "time") return DataType::scalar(TypeKind::Time);
  if (word == "null") return DataType::scalar(TypeKind::Null);
  return std::nullopt;
}
}  // namespace

std::optional<DataType> DataType::parse(std::string_view text) {
  size_t pos = 0;
  auto t = parse_type_at(text, pos);
  if (!t || pos != text.size()) return std::nullopt;
  return t;
}

bool DataType::operator==(const DataType& other) const {
  if (kind_ != other.kind_) return false;
  if (kind_ == TypeKind::Array) return element() == other.element();
  if (kind_ == TypeKind::Record) return fields() == other.fields();
  return true;
}

// ---------------------------------------------------------------------------
// Value

Value Value::array(ValueArray values) {
  return Value(Repr(std::make_shared<const ValueArray>(std::move(values))));
}

Value Value::record(TypedRecord rec) {
  return Value(Repr(std::make_shared<const TypedRecord>(std::move(rec))));
}

bool Value::is_array() const {
  return std::holds_alternative<std::shared_ptr<const ValueArray>>(v_);
}
bool Value::is_record() const {
  return std::holds_alternative<std::shared_ptr<const TypedRecord>>(v_);
}
const ValueArray& Value::as_array() const {
  return *std::get<std::shared_ptr<const ValueArray>>(v_);
}
const TypedRecord& Value::as_record() const {
  return *std::get<std::shared_ptr<const TypedRecord>>(v_);
}

DataType Value::type() const {
  if (is_null()) return DataType::scalar(TypeKind::Null);
  if (is_int()) return DataType::scalar(TypeKind::Int64);
  if (is_float()) return DataType::scalar(TypeKind::Float64);
  if (is_string()) return DataType::scalar(TypeKind::String);
  if (is_bool()) return DataType::scalar(TypeKind::Bool);
  if (is_time()) return DataType::scalar(TypeKind::Time);
  if (is_array()) {
    // Element type: first non-null element; all-null or empty arrays are
    // arrays of null.
    for (const auto& e : as_array()) {
      if (!e.is_null()) return DataType::array(e.type());
    }
    return DataType::array(DataType::scalar(TypeKind::Null));
  }
  return as_record().schema().fields().empty()
             ? DataType::record({})
             : DataType::record(as_record().schema().fields());
}

bool Value::operator==(const Value& other) const {
  if (v_.index() != other.v_.index()) return false;
  if (is_array()) return as_array() == other.as_array();
  if (is_record()) return as_record() == other.as_record();
  return v_ == other.v_;
}

// ---------------------------------------------------------------------------
// Schema

Schema::Schema(std::vector<std::pair<std::string, DataType>> fields)
    : fields_(std::move(fields)) {
  for (size_t i = 0; i < fields_.size(); i++) {
    for (size_t j = i + 1; j < fields_.size(); j++) {
      if (fields_[i].first == fields_[j].first)
        throw std::invalid_argument("duplicate field name: " + fields_[i].first);
    }
  }
}

std::optional<size_t> Schema::index_of(std::string_view name) const {
  for (size_t i = 0; i < fields_.size(); i++) {
    if (fields_[i].first == name) return i;
  }
  return std::nullopt;
}

std::string Schema::to_string() const {
  return DataType::record(fields_).to_string();
}

uint64_t Schema::fingerprint() const {
  // FNV-1a over the canonical type string: stable across processes and runs.
  std::string s = to_string();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fingerprint(const Schema& s) { return s.fingerprint(); }

// ---------------------------------------------------------------------------
// TypedRecord

TypedRecord::TypedRecord(Schema schema, std::vector<Value> values)
    : schema_(std::move(schema)), values_(std::move(values)) {
  if (schema_.arity() != values_.size())
    throw std::invalid_argument("schema/value arity mismatch");
  for (size_t i = 0; i < values_.size(); i++) {
    if (values_[i].is_null()) continue;
    if (values_[i].type() != schema_.fields()[i].second)
      throw std::invalid_argument("value type mismatch for field " +
                                  schema_.fields()[i].first);
  }
}

TypedRecord TypedRecord::make(std::vector<std::pair<std::string, Value>> fields) {
  std::vector<std::pair<std::string, DataType>> types;
  std::vector<Value> values;
  types.reserve(fields.size());
  values.reserve(fields.size());
  for (auto& [n, v] : fields) {
    types.emplace_back(n, v.type());
    values.push_back(std::move(v));
  }
  return TypedRecord(Schema(std::move(types)), std::move(values));
}

const Value* TypedRecord::find(std::string_view name) const {
  auto idx = schema_.index_of(name);
  return idx ? &values_[*idx] : nullptr;
}

const DataType* TypedRecord::type_of(std::string_view name) const {
  auto idx = schema_.index_of(name);
  return idx ? &schema_.fields()[*idx].second : nullptr;
}

TypedRecord TypedRecord::with_field(const std::string& name, Value v) const {
  DataType t = v.type();
  return with_field(name, std::move(v), std::move(t));
}

TypedRecord TypedRecord::with_field(const std::string& name, Value v,
                                    DataType t) const {
  auto fields = schema_.fields();
  auto values = values_;
  if (auto idx = schema_.index_of(name)) {
    fields[*idx].second = std::move(t);
    values[*idx] = std::move(v);
  } else {
    fields.emplace_back(name, std::move(t));
    values.push_back(std::move(v));
  }
  return TypedRecord(Schema(std::move(fields)), std::move(values));
}

TypedRecord TypedRecord::without_field(std::string_view name) const {
  auto idx = schema_.index_of(name);
  if (!idx) return *this;
  auto fields = schema_.fields();
  auto values = values_;
  fields.erase(fields.begin() + *idx);
  values.erase(values.begin() + *idx);
  return TypedRecord(Schema(std::move(fields)), std::move(values));
}

bool TypedRecord::operator==(const TypedRecord& other) const {
  return schema_ == other.schema_ && values_ == other.values_;
}

Schema schema_of(const TypedRecord& rec) { return rec.schema(); }

// ---------------------------------------------------------------------------
// Text format

namespace {

void append_escaped(std::string& out, const std::string& s) {
  out += '"';
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  out += '"';
}

std::string format_float(double d) {
  if (!std::isfinite(d)) return "null";  // non-finite has no text form
  if (d == std::trunc(d) && std::fabs(d) < 1e16) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f.", d);
    return buf;
  }
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, d);
  std::string s(buf, p);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find('E') == std::string::npos)
    s += '.';
  return s;
}

void serialize_value_to(std::string& out, const Value& v) {
  if (v.is_null()) {
    out += "null";
  } else if (v.is_int()) {
    out += std::to_string(v.as_int());
  } else if (v.is_float()) {
    out += format_float(v.as_float());
  } else if (v.is_string()) {
    append_escaped(out, v.as_string());
  } else if (v.is_bool()) {
    out += v.as_bool() ? "true" : "false";
  } else if (v.is_time()) {
    out += format_rfc3339(v.as_time());
  } else if (v.is_array()) {
    out += '[';
    bool first = true;
    for (const auto& e : v.as_array()) {
      if (!first) out += ',';
      first = false;
      serialize_value_to(out, e);
    }
    out += ']';
  } else {
    out += serialize_text(v.as_record());
  }
}

struct Parser {
  std::string_view s;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) { throw parse_error(msg, pos); }

  char peek() const { return pos < s.size() ? s[pos] : '\0'; }
  bool eof() const { return pos >= s.size(); }
  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) pos++;
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    pos++;
  }

  std::string parse_identifier() {
    if (!is_ident_start(peek())) fail("expected identifier");
    size_t start = pos;
    while (pos < s.size() && is_ident_char(s[pos])) pos++;
    return std::string(s.substr(start, pos - start));
  }

  std::string parse_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof()) fail("unterminated string");
      char c = s[pos++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      char e = s[pos++];
      switch (e) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case '/': out += '/'; break;
        case 'n': out += '\n'; break;
        case 'r': out += '\r'; break;
        case 't': out += '\t'; break;
        case 'u': {
          if (pos + 4 > s.size()) fail("truncated \\u escape");
          unsigned cp = 0;
          for (int i = 0; i < 4; i++) {
            char h = s[pos++];
            cp <<= 4;
            if (h >= '0' && h <= '9') cp |= h - '0';
            else if (h >= 'a' && h <= 'f') cp |= h - 'a' + 10;
            else if (h >= 'A' && h <= 'F') cp |= h - 'A' + 10;
            else fail("bad \\u escape");
          }
          // UTF-8 encode (BMP only).
          if (cp < 0x80) {
            out += static_cast<char>(cp);
          } else if (cp < 0x800) {
            out += static_cast<char>(0xC0 | (cp >> 6));
            out += static_cast<char>(0x80 | (cp & 0x3F));
          } else {
            out += static_cast<char>(0xE0 | (cp >> 12));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
          }
          break;
        }
        default: fail("unknown escape");
      }
    }
  }

  // A token starting with a digit (or '-') is a timestamp when it matches the
  // RFC 3339 shape, otherwise an int or float literal.
  Value parse_number_or_time() {
    size_t start = pos;
    if (peek() == '-') pos++;
    while (pos < s.size() && is_digit(s[pos])) pos++;
    size_t int_end = pos;
    if (int_end - start == 4 && peek() == '-' && s[start] != '-') {
      // Timestamp: scan to end of token.
      while (pos < s.size() && (is_digit(s[pos]) || s[pos] == '-' ||
                                s[pos] == ':' || s[pos] == '.' ||
                                s[pos] == 'T' || s[pos] == 'Z' ||
                                s[pos] == '+' || s[pos] == 't' || s[pos] == 'z'))
        pos++;
      auto t = parse_rfc3339(s.substr(start, pos - start));
      if (!t) {
        pos = start;
        fail("invalid timestamp");
      }
      return Value::time(*t);
    }
    if (int_end == start || (int_end == start + 1 && s[start] == '-'))
      fail("expected number");
    bool is_float = false;
    if (peek() == '.') {
      is_float = true;
      pos++;
      while (pos < s.size() && is_digit(s[pos])) pos++;
    }
    if (peek() == 'e' || peek() == 'E') {
      is_float = true;
      pos++;
      if (peek() == '+' || peek() == '-') pos++;
      size_t ds = pos;
      while (pos < s.size() && is_digit(s[pos])) pos++;
      if (pos == ds) fail("bad exponent");
    }
    std::string_view tok = s.substr(start, pos - start);
    if (is_float) {
      double d = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
      if (ec != std::errc() || p != tok.data() + tok.size())
        fail("bad float literal");
      return Value::floating(d);
    }
    int64_t i = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), i);
    if (ec != std::errc() || p != tok.data() + tok.size())
      fail("bad int literal");
    return Value::integer(i);
  }

  Value parse_value() {
    skip_ws();
    char c = peek();
    if (c == '"') return Value::string(parse_string());
    if (c == '{') return Value::record(parse_record());
    if (c == '[') {
      pos++;
      ValueArray elems;
      skip_ws();
      if (peek() == ']') {
        pos++;
        return Value::array({});
      }
      while (true) {
        elems.push_back(parse_value());
        skip_ws();
        if (peek() == ',') {
          pos++;
          continue;
        }
        expect(']');
        break;
      }
      // Homogeneity: all elements share the top-level variant, or are null.
      const Value* first = nullptr;
      for (const auto& e : elems) {
        if (e.is_null()) continue;
        if (!first) {
          first = &e;
        } else if (e.type().kind() != first->type().kind()) {
          fail("heterogeneous array");
        }
      }
      return Value::array(std::move(elems));
    }
    if (is_ident_start(c)) {
      std::string word = parse_identifier();
      if (word == "true") return Value::boolean(true);
      if (word == "false") return Value::boolean(false);
      if (word == "null") return Value::null();
      pos -= word.size();
      fail("unexpected identifier '" + word + "'");
    }
    if (c == '-' || is_digit(c)) return parse_number_or_time();
    fail("expected value");
  }

  TypedRecord parse_record() {
    expect('{');
    skip_ws();
    std::vector<std::pair<std::string, Value>> fields;
    if (peek() == '}') {
      pos++;
      return TypedRecord::make({});
    }
    while (true) {
      skip_ws();
      std::string name = parse_identifier();
      skip_ws();
      expect(':');
      Value v = parse_value();
      fields.emplace_back(std::move(name), std::move(v));
      skip_ws();
      if (peek() == ',') {
        pos++;
        continue;
      }
      expect('}');
      break;
    }
    for (size_t i = 0; i < fields.size(); i++)
      for (size_t j = i + 1; j < fields.size(); j++)
        if (fields[i].first == fields[j].first)
          fail("duplicate field '" + fields[i].first + "'");
    return TypedRecord::make(std::move(fields));
  }
};

}  // namespace

TypedRecord parse_text(std::string_view line) {
  Parser p{line};
  p.skip_ws();
  TypedRecord rec = p.parse_record();
  p.skip_ws();
  if (!p.eof()) p.fail("trailing input");
  return rec;
}

std::string serialize_value(const Value& v) {
  std::string out;
  serialize_value_to(out, v);
  return out;
}

std::string serialize_text(const TypedRecord& rec) {
  std::string out = "{";
  const auto& fields = rec.schema().fields();
  for (size_t i = 0; i < fields.size(); i++) {
    if (i) out += ',';
    out += fields[i].first;
    out += ':';
    serialize_value_to(out, rec.values()[i]);
  }
  out += '}';
  return out;
}

std::vector<TypedRecord> parse_lines(std::string_view text) {
  std::vector<TypedRecord> out;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.remove_suffix(1);
    if (!line.empty()) {
      try {
        out.push_back(parse_text(line));
      } catch (const parse_error& e) {
        throw parse_error(std::string(e.what()) + " (line starting at byte " +
                              std::to_string(pos) + ")",
                          pos + e.pos());
      }
    }
    pos = end + 1;
  }
  return out;
}

std::string serialize_lines(const std::vector<TypedRecord>& recs) {
  std::string out;
  for (const auto& r : recs) {
    out += serialize_text(r);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Casting

std::optional<Value> cast_value(const Value& v, const DataType& target) {
  if (v.is_null()) return Value::null();
  if (v.type() == target) return v;
  switch (target.kind()) {
    case TypeKind::Float64:
      if (v.is_int()) return Value::floating(double(v.as_int()));
      if (v.is_string()) {
        const std::string& s = v.as_string();
        double d = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
        if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
        return Value::floating(d);
      }
      if (v.is_bool()) return Value::floating(v.as_bool() ? 1.0 : 0.0);
      return std::nullopt;
    case TypeKind::Int64:
      if (v.is_string()) {
        const std::string& s = v.as_string();
        int64_t i = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i);
        if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
        return Value::integer(i);
      }
      if (v.is_bool()) return Value::integer(v.as_bool() ? 1 : 0);
      return std::nullopt;
    case TypeKind::String:
      if (v.is_int()) return Value::string(std::to_string(v.as_int()));
      if (v.is_float()) return Value::string(format_float(v.as_float()));
      if (v.is_bool()) return Value::string(v.as_bool() ? "true" : "false");
      return std::nullopt;
    case TypeKind::Bool:
      if (v.is_string()) {
        if (v.as_string() == "true") return Value::boolean(true);
        if (v.as_string() == "false") return Value::boolean(false);
      }
      return std::nullopt;
    default:
      return std::nullopt;
  }
}

}  // namespace ctxr
