"""Two ways the lenient protocols overstate quality, shown on four-bin
fixtures.  No training involved; runs instantly.

Run:  python3 demos/protocol_pitfalls.py
"""

from subevents.evalkit import (LabelScheme, SubEventSpan, bio_to_spans,
                               eval_bin_level, eval_binary_event,
                               eval_relaxed, spans_to_bio)

scheme = LabelScheme(("card", "goal"))
B, I = scheme.b_id, scheme.i_id


def report(tag, rep):
    print("  %-14s P=%.2f R=%.2f F1=%.2f" % (tag, rep.precision, rep.recall,
                                             rep.f1))


# ---------------------------------------------------------------------------
# pitfall 1: relaxed scoring forgives fragmentation

print("pitfall 1: one gold goal span over bins 0..3; the prediction types")
print("only bin 0 correctly and fills the rest with card labels.\n")
gold_spans = [SubEventSpan("goal", 0, 3)]
pred = [B("goal"), B("card"), I("card"), I("card")]
gold = spans_to_bio(4, gold_spans, scheme)
print("  gold: %s" % " ".join(scheme.label_name(g) for g in gold))
print("  pred: %s\n" % " ".join(scheme.label_name(p) for p in pred))
report("bin-level", eval_bin_level([gold], [pred], scheme))
report("relaxed", eval_relaxed([gold_spans], [pred], scheme))
print("""
  One correct bin out of four redeems the entire span under relaxed
  scoring, and the three wrong card labels cost nothing because relaxed
  only asks whether each gold span got its type somewhere inside.
""")

# ---------------------------------------------------------------------------
# pitfall 2: binary event-level scoring forgives merging

print("pitfall 2: two separate gold events; the detector flags every bin.\n")
gold_spans = [SubEventSpan("goal", 0, 0), SubEventSpan("card", 3, 3)]
always_on = [1, 1, 1, 1]
honest = [1, 0, 0, 1]
gold = spans_to_bio(4, gold_spans, scheme)
report("flag all bins", eval_binary_event([gold_spans], [always_on]))
report("flag 2 bins", eval_binary_event([gold_spans], [honest]))
print("""
  Flagging everything produces a single run that overlaps both gold
  spans: precision and recall are perfect even though the output holds
  no information.  Event counts, boundaries and types all vanish from
  the score, which is why binary event-level numbers only make sense
  next to a bin-level or relaxed report.
""")

# ---------------------------------------------------------------------------
# the protocols are not ordered in general

print("footnote: relaxed F1 is not always >= bin-level recall.")
gold_spans = [SubEventSpan("goal", 0, 8), SubEventSpan("card", 9, 9)]
pred = [B("goal")] + [I("goal")] * 9  # every bin typed goal
gold = spans_to_bio(10, gold_spans, scheme)
report("bin-level", eval_bin_level([gold], [pred], scheme))
report("relaxed", eval_relaxed([gold_spans], [pred], scheme))
print("""
  Nine of ten gold bins carry the right type (recall 0.9) yet only one
  of the two gold spans is ever typed correctly (relaxed 0.5): span
  counts and bin counts weight mistakes differently.
""")
