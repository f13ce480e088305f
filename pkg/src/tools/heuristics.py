"""
规则版语言学处理：分句、分词、词性、名词短语块、实体、依存结构。
只用于测试与离线演示，不追求准确率。
"""
import re
from typing import List, Tuple, Dict, Any

SENTENCE_RE = re.compile(r"[^.!?]+(?:[.!?]+|$)")
TOKEN_RE = re.compile(r"\w+(?:['’]\w+)*|[^\w\s]")

DETERMINERS = {"the", "a", "an", "this", "that", "these", "those", "its", "his", "her",
               "their", "our", "my", "your", "some", "every", "each", "no", "any"}
PRONOUNS = {"i", "you", "he", "she", "it", "we", "they", "him", "them", "us", "me",
            "who", "what", "which", "whom", "something", "someone", "everyone"}
AUXILIARIES = {"is", "are", "was", "were", "be", "been", "being", "will", "would", "can",
               "could", "has", "have", "had", "do", "does", "did", "should", "may", "might",
               "must", "shall", "'s", "gonna"}
ADPOSITIONS = {"in", "on", "at", "of", "to", "for", "with", "by", "from", "about", "into",
               "over", "after", "before", "under", "between", "through", "during", "against",
               "than", "as", "according", "since", "without", "per"}
CONJUNCTIONS = {"and", "or", "but", "nor", "so", "yet", "because", "if", "while", "although"}
ADVERBS = {"not", "n't", "also", "really", "very", "anymore", "never", "just", "only",
           "still", "already", "again", "too", "now", "then", "here", "there", "last"}
VERBS = {"beat", "beats", "saw", "see", "sees", "said", "says", "say", "perform", "performs",
         "take", "takes", "took", "make", "makes", "made", "win", "wins", "won", "lose",
         "loses", "lost", "get", "gets", "got", "give", "gives", "gave", "go", "goes", "went",
         "play", "plays", "meet", "met", "tell", "told", "announce", "announced", "visit",
         "pulled", "criticised", "criticized", "think", "thinks", "know", "knows", "found",
         "find", "buy", "bought", "sell", "sold", "run", "runs", "ran", "leave", "left"}
NUMBER_WORDS = {"one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
                "ten", "hundred", "thousand", "million", "billion"}
ADJECTIVE_SUFFIXES = ("ous", "ful", "ive", "able", "ible", "less", "ish", "ical")

NOMINAL_TAGS = {"NOUN", "PROPN", "PRON"}
CHUNK_BODY_TAGS = {"ADJ", "NUM", "NOUN", "PROPN"}
CHUNK_HEAD_TAGS = {"NOUN", "PROPN", "NUM"}


def split_sentences(text: str) -> List[Tuple[str, int]]:
    """按句末标点分句，返回 (句子, 起始偏移)"""
    sentences = []
    for match in SENTENCE_RE.finditer(text):
        raw = match.group(0)
        stripped = raw.strip()
        if not stripped:
            continue
        offset = match.start() + (len(raw) - len(raw.lstrip()))
        sentences.append((stripped, offset))
    return sentences


def tokenize(text: str, offset: int = 0) -> List[Tuple[str, int, int]]:
    return [(m.group(0), offset + m.start(), offset + m.end()) for m in TOKEN_RE.finditer(text)]


def word_tokens(text: str, offset: int = 0) -> List[Tuple[str, int, int]]:
    """只保留含字母数字的 token"""
    return [t for t in tokenize(text, offset) if any(ch.isalnum() for ch in t[0])]


def pos_tag(word: str) -> str:
    lower = word.lower()
    if not any(ch.isalnum() for ch in word):
        return "PUNCT"
    if lower in DETERMINERS:
        return "DET"
    if lower in PRONOUNS:
        return "PRON"
    if lower in AUXILIARIES:
        return "AUX"
    if lower in ADPOSITIONS:
        return "ADP"
    if lower in CONJUNCTIONS:
        return "CCONJ"
    if lower in ADVERBS:
        return "ADV"
    if lower.isdigit() or lower in NUMBER_WORDS:
        return "NUM"
    if lower in VERBS:
        return "VERB"
    if word[0].isupper():
        return "PROPN"
    if len(lower) > 4 and (lower.endswith("ed") or lower.endswith("ing")):
        return "VERB"
    if len(lower) > 5 and lower.endswith(ADJECTIVE_SUFFIXES):
        return "ADJ"
    return "NOUN"


def chunk_noun_phrases(tags: List[str]) -> List[Tuple[int, int]]:
    """限定词 + 名词串分块，返回 token 下标区间 [start, end)"""
    chunks = []
    i = 0
    n = len(tags)
    while i < n:
        start = i
        j = i + 1 if tags[i] == "DET" else i
        k = j
        last_head = -1
        while k < n and tags[k] in CHUNK_BODY_TAGS:
            if tags[k] in CHUNK_HEAD_TAGS:
                last_head = k
            k += 1
        if last_head >= 0:
            chunks.append((start, last_head + 1))
            i = last_head + 1
        elif tags[i] == "PRON":
            chunks.append((i, i + 1))
            i += 1
        else:
            i += 1
    return chunks


def entity_runs(tags: List[str]) -> List[Tuple[int, int]]:
    """连续专有名词串作为实体"""
    runs = []
    i = 0
    while i < len(tags):
        if tags[i] == "PROPN":
            j = i
            while j < len(tags) and tags[j] == "PROPN":
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def parse(tags: List[str], chunks: List[Tuple[int, int]]) -> Tuple[List[int], List[str]]:
    """
    右分支依存结构。

    块内词挂到块尾中心词；动词之前的成分与标点挂到根，
    根之后的成分依次挂到前一个成分上，形成向右延伸的链。
    """
    n = len(tags)
    if n == 0:
        return [], []
    chunk_of = {}
    for start, end in chunks:
        for k in range(start, end):
            chunk_of[k] = (start, end)

    units = [k for k in range(n)
             if tags[k] != "PUNCT" and (k not in chunk_of or k == chunk_of[k][1] - 1)]
    root = next((k for k in units if tags[k] == "VERB"), None)
    if root is None:
        root = next((k for k in units if tags[k] == "AUX"), None)
    if root is None:
        root = chunks[0][1] - 1 if chunks else (units[0] if units else 0)

    heads = [root] * n
    labels = ["punct" if t == "PUNCT" else "dep" for t in tags]
    previous = root
    for k in units:
        if k < root:
            labels[k] = {"AUX": "aux", "ADP": "case"}.get(tags[k], "nsubj" if tags[k] in NOMINAL_TAGS else "dep")
        elif k > root:
            heads[k] = previous
            if tags[k] in NOMINAL_TAGS:
                labels[k] = "obj" if previous == root else "nmod"
            else:
                labels[k] = {"AUX": "aux", "ADP": "case"}.get(tags[k], "dep")
            previous = k
    for k, (start, end) in chunk_of.items():
        if k != end - 1:
            heads[k] = end - 1
            labels[k] = "det" if tags[k] == "DET" else "nmod"
    heads[root] = -1
    labels[root] = "ROOT"
    return heads, labels


def annotate_text(text: str) -> List[Dict[str, Any]]:
    """生成符合 annotate 协议的句子列表"""
    sentences = []
    for sentence, offset in split_sentences(text):
        tokens = tokenize(sentence, offset)
        tags = [pos_tag(tok) for tok, _, _ in tokens]
        chunks = chunk_noun_phrases(tags)
        heads, labels = parse(tags, chunks)
        sentences.append({
            "text": sentence,
            "char_offset": offset,
            "tokens": [[tok, s, e, tag] for (tok, s, e), tag in zip(tokens, tags)],
            "entities": [[tokens[a][1], tokens[b - 1][2], "ENTITY"] for a, b in entity_runs(tags)],
            "np_chunks": [[tokens[a][1], tokens[b - 1][2]] for a, b in chunks],
            "dep_heads": heads,
            "dep_labels": labels,
        })
    return sentences
