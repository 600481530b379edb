#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ctxr/record.hpp"

namespace ctxr {

/// Expression over one record's fields. A type error during evaluation
/// rejects the record, never the evaluator.
class Expr {
public:
  enum class Op {
    Add, Sub, Mul, Div,
    Eq, Ne, Lt, Le, Gt, Ge,
    And, Or,
  };

  struct FieldRef { std::string name; };
  struct Literal { Value value; };
  struct Binary {
    Op op;
    std::shared_ptr<const Expr> lhs, rhs;
  };
  struct HasField { std::string name; };
  struct HasType {
    std::string name;
    DataType type;
  };

  using Node = std::variant<FieldRef, Literal, Binary, HasField, HasType>;

  explicit Expr(Node n) : node_(std::move(n)) {}
  const Node& node() const { return node_; }

  std::string to_string() const;

private:
  Node node_;
};

/// Evaluation result. `error` marks a per-record type error; otherwise
/// `value` holds the result (possibly null).
struct ExprResult {
  Value value;
  bool error = false;
};

ExprResult eval_expr(const Expr& e, const TypedRecord& rec);

/// Ordered (field, type) casts for `shape(this, <{...}>)`.
struct TypeSpec {
  std::vector<std::pair<std::string, DataType>> fields;
  std::string to_string() const;
};

enum class AggFn { Avg, Sum, Count, Min, Max };

struct AggSpec {
  std::string output;  // defaults to the function name
  AggFn fn;
  std::string input;  // empty for count()
};

namespace stage {

struct Where { Expr expr; };
struct Head { int64_t n = 1; };
struct Sort {
  std::string field;
  bool descending = false;
};
struct Cut { std::vector<std::string> fields; };
struct Rename {
  // new := old pairs, applied left to right.
  std::vector<std::pair<std::string, std::string>> pairs;
};
struct Put {
  std::string field;
  Expr expr;
};
struct Shape { TypeSpec spec; };
struct Aggregate {
  std::vector<AggSpec> aggs;
  std::vector<std::string> group_by;
};
struct LogSink { std::string label; };
/// Compiled form of reject/drop rule actions: filters every record, counting
/// it under `reason`; reject additionally routes the record to the log.
struct DropAll {
  std::string reason;
  bool log = true;  // reject:true, drop:false
};

}  // namespace stage

using Stage =
    std::variant<stage::Where, stage::Head, stage::Sort, stage::Cut,
                 stage::Rename, stage::Put, stage::Shape, stage::Aggregate,
                 stage::LogSink, stage::DropAll>;

std::string stage_to_string(const Stage& s);

/// Per-evaluation accounting: rejected records by reason, plus records routed
/// to log sinks (including reject rules), in arrival order.
struct EvalReport {
  uint64_t rejected = 0;
  std::map<std::string, uint64_t> rejects_by_reason;
  std::vector<std::pair<std::string, TypedRecord>> logged;

  void merge(const EvalReport& other);
};

/// A parsed dataflow program. Immutable after parse; evaluation is pure.
class Pipeline {
public:
  Pipeline() = default;
  explicit Pipeline(std::vector<Stage> stages);

  static Pipeline parse(std::string_view text);

  const std::vector<Stage>& stages() const { return stages_; }
  bool empty() const { return stages_.empty(); }
  std::string to_string() const;

  bool has_aggregate() const;
  /// True when output depends on input order/prefix (Sort or Head present).
  bool order_sensitive() const;
  /// True when evaluation carries state across batches (aggregate or head).
  bool stateful() const;
  /// True when every stage maps one record at a time (no Head/Sort/Aggregate).
  bool record_local() const;
  /// Operator count for Qcx; each aggregate function counts as one.
  int operator_count() const;

  bool operator==(const Pipeline& other) const {
    return to_string() == other.to_string();
  }

private:
  std::vector<Stage> stages_;
};

std::vector<TypedRecord> eval(const Pipeline& p, std::vector<TypedRecord> input,
                              EvalReport* report = nullptr);

/// Streaming evaluator. Stateless stages apply per batch; a terminal
/// aggregate keeps running state and re-emits a refreshed result per batch
/// whenever the state changed.
class IncrementalEval {
public:
  explicit IncrementalEval(Pipeline p);
  ~IncrementalEval();
  IncrementalEval(IncrementalEval&&) noexcept;
  IncrementalEval& operator=(IncrementalEval&&) noexcept;

  std::vector<TypedRecord> push(std::vector<TypedRecord> batch,
                                EvalReport* report = nullptr);
  /// Rebuilds stage state from replayed history without emitting aggregate
  /// snapshots. Returns the records surviving the stateless stages (the
  /// pipeline output for non-aggregate pipelines).
  std::vector<TypedRecord> warm(std::vector<TypedRecord> batch);

  const Pipeline& pipeline() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Applies a record-local pipeline to one record; nullopt when the record is
/// filtered, logged or rejected. Requires p.record_local().
std::optional<TypedRecord> apply_record_local(const Pipeline& p, TypedRecord rec,
                                              EvalReport& report);

/// Query complexity: one per dataflow operator plus two per queried target
/// (the context/kind name and the egress name).
int qcx(const std::vector<std::string>& targets, const Pipeline& p);

}  // namespace ctxr
