#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace ctxr {

/// Error raised by the text parsers; `pos` is a byte offset into the input.
class parse_error : public std::runtime_error {
public:
  parse_error(std::string msg, size_t pos)
    : std::runtime_error(std::move(msg)), pos_(pos) {}
  size_t pos() const { return pos_; }

private:
  size_t pos_;
};

/// UTC wall-clock instant, nanosecond precision.
struct Timestamp {
  int64_t ns = 0;

  auto operator<=>(const Timestamp&) const = default;
  static Timestamp min() { return {INT64_MIN}; }
};

std::string format_rfc3339(Timestamp t);
std::optional<Timestamp> parse_rfc3339(std::string_view text);

enum class TypeKind : uint8_t {
  Null,
  Int64,
  Float64,
  String,
  Bool,
  Time,
  Array,
  Record,
};

/// Structural type descriptor. Scalars are flyweights; arrays/records share
/// their payload so copies are cheap.
class DataType {
public:
  DataType() : kind_(TypeKind::Null) {}
  static DataType scalar(TypeKind k);
  static DataType array(DataType element);
  static DataType record(std::vector<std::pair<std::string, DataType>> fields);

  TypeKind kind() const { return kind_; }
  const DataType& element() const;
  const std::vector<std::pair<std::string, DataType>>& fields() const;

  /// Canonical type string, e.g. `{a:int64,b:[string]}`.
  std::string to_string() const;
  /// Parses a canonical type string (`int64`, `[float64]`, `{a:time}` ...).
  static std::optional<DataType> parse(std::string_view text);

  bool operator==(const DataType& other) const;
  bool operator!=(const DataType& other) const { return !(*this == other); }

private:
  struct Compound {
    std::vector<std::pair<std::string, DataType>> fields;  // record
    std::unique_ptr<DataType> element;                     // array
  };
  TypeKind kind_;
  std::shared_ptr<const Compound> compound_;
};

class TypedRecord;
class Value;

using ValueArray = std::vector<Value>;

/// One datum: the variant set mirrors the text grammar. Immutable by
/// convention; arrays and nested records are shared.
class Value {
public:
  Value() : v_(std::monostate{}) {}  // null
  static Value null() { return Value(); }
  static Value integer(int64_t v) { return Value(Repr(v)); }
  static Value floating(double v) { return Value(Repr(v)); }
  static Value string(std::string v) { return Value(Repr(std::move(v))); }
  static Value boolean(bool v) { return Value(Repr(v)); }
  static Value time(Timestamp v) { return Value(Repr(v)); }
  static Value array(ValueArray values);
  static Value record(TypedRecord rec);

  bool is_null() const { return std::holds_alternative<std::monostate>(v_); }
  bool is_int() const { return std::holds_alternative<int64_t>(v_); }
  bool is_float() const { return std::holds_alternative<double>(v_); }
  bool is_numeric() const { return is_int() || is_float(); }
  bool is_string() const { return std::holds_alternative<std::string>(v_); }
  bool is_bool() const { return std::holds_alternative<bool>(v_); }
  bool is_time() const { return std::holds_alternative<Timestamp>(v_); }
  bool is_array() const;
  bool is_record() const;

  int64_t as_int() const { return std::get<int64_t>(v_); }
  double as_float() const { return std::get<double>(v_); }
  /// Numeric value widened to double; caller must check is_numeric().
  double as_number() const { return is_int() ? double(as_int()) : as_float(); }
  const std::string& as_string() const { return std::get<std::string>(v_); }
  bool as_bool() const { return std::get<bool>(v_); }
  Timestamp as_time() const { return std::get<Timestamp>(v_); }
  const ValueArray& as_array() const;
  const TypedRecord& as_record() const;

  /// Variant's type; arrays/records derive element/field types recursively.
  DataType type() const;

  bool operator==(const Value& other) const;
  bool operator!=(const Value& other) const { return !(*this == other); }

private:
  using Repr = std::variant<std::monostate, int64_t, double, std::string, bool,
                            Timestamp, std::shared_ptr<const ValueArray>,
                            std::shared_ptr<const TypedRecord>>;
  explicit Value(Repr v) : v_(std::move(v)) {}
  Repr v_;
};

/// Ordered (name, type) list. Field names are unique. The fingerprint is a
/// stable 64-bit hash of the canonical type string, identical across runs
/// and processes.
class Schema {
public:
  Schema() = default;
  explicit Schema(std::vector<std::pair<std::string, DataType>> fields);

  size_t arity() const { return fields_.size(); }
  const std::vector<std::pair<std::string, DataType>>& fields() const {
    return fields_;
  }
  std::optional<size_t> index_of(std::string_view name) const;

  std::string to_string() const;  // canonical, `{a:int64,b:string}`
  uint64_t fingerprint() const;

  bool operator==(const Schema& other) const { return fields_ == other.fields_; }
  bool operator!=(const Schema& other) const { return !(*this == other); }

private:
  std::vector<std::pair<std::string, DataType>> fields_;
};

uint64_t fingerprint(const Schema& s);

/// Self-describing record: a schema plus one value per field. A value may be
/// null regardless of its declared type; otherwise variants must agree.
class TypedRecord {
public:
  TypedRecord() = default;
  TypedRecord(Schema schema, std::vector<Value> values);

  /// Builds a record deriving each field's type from its value.
  static TypedRecord make(std::vector<std::pair<std::string, Value>> fields);

  const Schema& schema() const { return schema_; }
  const std::vector<Value>& values() const { return values_; }
  size_t arity() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  const Value* find(std::string_view name) const;
  const DataType* type_of(std::string_view name) const;

  /// Copy with `name` set to `v` (type derived unless given); appends the
  /// field if absent, replaces in place otherwise.
  TypedRecord with_field(const std::string& name, Value v) const;
  TypedRecord with_field(const std::string& name, Value v, DataType t) const;
  TypedRecord without_field(std::string_view name) const;

  bool operator==(const TypedRecord& other) const;
  bool operator!=(const TypedRecord& other) const { return !(*this == other); }

private:
  Schema schema_;
  std::vector<Value> values_;
};

/// Parses one record in the canonical text grammar.
TypedRecord parse_text(std::string_view line);

/// Canonical text form: fields in schema order, floats always with `.` or
/// exponent, strings double-quoted, timestamps bare RFC 3339.
std::string serialize_text(const TypedRecord& rec);

std::string serialize_value(const Value& v);

/// Newline-delimited records; blank lines are skipped.
std::vector<TypedRecord> parse_lines(std::string_view text);
std::string serialize_lines(const std::vector<TypedRecord>& recs);

/// Lossless-or-documented conversions; nullopt when no conversion exists.
/// Null converts to null of any type. Identity when variants already match.
std::optional<Value> cast_value(const Value& v, const DataType& target);

Schema schema_of(const TypedRecord& rec);

}  // namespace ctxr
