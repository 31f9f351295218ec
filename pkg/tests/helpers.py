"""Record builders shared by the tests."""

from sms_sidechan.trace import TimingRecord


def make_record(burst=0, seq=0, t_tx=1000, t_sent=1100, t_del=1350, status="Delivered", **kw):
    fields = dict(location="DE-4", operator="G", device="p8l", routing="SGsAP_Diameter",
                  connection="LTE", distance_km=None)
    fields.update(kw)
    return TimingRecord(burst, seq, t_tx, t_sent, t_del, status, **fields)


def make_burst(burst, durations, t0=0, status=None, **kw):
    """Records for one burst from (T_sent, T_del) pairs, 5 s apart."""
    out = []
    for seq, (ds, dd) in enumerate(durations):
        t_tx = t0 + seq * 5000
        st = (status or {}).get(seq, "Delivered")
        if st == "Failed":
            out.append(make_record(burst, seq, t_tx, t_tx + ds, None, "Failed", **kw))
        else:
            out.append(make_record(burst, seq, t_tx, t_tx + ds, t_tx + ds + dd, **kw))
    return out
