import json

import pytest

from weaklab.corpus import Dataset, Instance, TEXT_TASK


@pytest.fixture
def text_dataset():
    """Small 2-class text dataset with gold labels everywhere."""
    def inst(i, text, label):
        return Instance(id=i, text=text, gold_label=label)

    train = [
        inst(0, "check out my channel please subscribe", 1),
        inst(1, "what a great song", 0),
        inst(2, "subscribe to my channel for free stuff", 1),
        inst(3, "love this track so much", 0),
        inst(4, "free entry click the link", 1),
        inst(5, "this brings back memories", 0),
    ]
    valid = [
        inst(10, "subscribe now my channel", 1),
        inst(11, "beautiful music video", 0),
        inst(12, "free gift card click here", 1),
        inst(13, "the melody is wonderful", 0),
    ]
    test = [
        inst(20, "check my channel out", 1),
        inst(21, "such a lovely song", 0),
    ]
    return Dataset(task_kind=TEXT_TASK, classes=["HAM", "SPAM"], default_class=None,
                   train=train, valid=valid, test=test)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record))
            fh.write("\n")
    return str(path)
