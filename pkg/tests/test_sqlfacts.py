from thor.domain import ExecutionOutcome, OutcomeStatus
from thor.sqlfacts import converted_columns, is_zero_aggregate, matched_nothing, text_predicates


def test_text_predicates_unwrap_functions(chinook):
    preds = text_predicates(
        "SELECT COUNT(*) FROM chinook_track t WHERE LOWER(t.genre) = 'hip hop' OR genre LIKE '%rap%'", chinook[1]
    )
    assert [(p.table, p.column, p.op, p.literal, p.has_wildcard) for p in preds] == [
        ("chinook_track", "genre", "eq", "hip hop", False),
        ("chinook_track", "genre", "like", "%rap%", True),
    ]


def test_numeric_predicates_ignored(chinook):
    assert text_predicates("SELECT * FROM chinook_track WHERE unit_price = 1", chinook[1]) == []


def test_converted_columns(logistics):
    sql = "SELECT SUM(dr.distance / 1609.34) FROM delivery_requests dr"
    assert converted_columns(sql, logistics[1]) == {"delivery_requests.distance"}
    assert converted_columns("SELECT SUM(distance) FROM delivery_requests", logistics[1]) == set()


def test_zero_aggregate():
    zero = ExecutionOutcome(OutcomeStatus.ROWS, ((0,),), ("n",))
    assert is_zero_aggregate("SELECT COUNT(*) FROM t WHERE a = 'x'", zero)
    assert not is_zero_aggregate("SELECT COUNT(*) FROM t GROUP BY a", zero)
    assert not is_zero_aggregate("SELECT a FROM t", ExecutionOutcome(OutcomeStatus.ROWS, ((0,),), ("a",)))
    assert not is_zero_aggregate("SELECT COUNT(*) FROM t", ExecutionOutcome(OutcomeStatus.ROWS, ((3,),), ("n",)))


def test_matched_nothing():
    assert matched_nothing("SELECT a FROM t", ExecutionOutcome(OutcomeStatus.EMPTY, ()))
    assert not matched_nothing("SELECT a FROM t", ExecutionOutcome(OutcomeStatus.ROWS, ((1,),), ("a",)))
