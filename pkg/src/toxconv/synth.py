"""Synthetic conversation corpora with planted structure/toxicity effects.

The generator is a test oracle: it grows reply trees among users of a
stochastic-block follow graph and draws each reply's toxicity from a planted
table keyed by the parent's toxicity and the follow relation between the
replier and the parent's author.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import Snapshot, SnapshotStore, post_to_record, snapshot_to_record
from .model import Post
from .toxicity import DEFAULT_THRESHOLD

EDGE_TYPES = ("mutual", "child_follows_parent", "parent_follows_child", "none")

# toxic-reply probabilities by (parent toxic?, edge type); magnitudes follow
# the dyad analysis of the news corpus
DEFAULT_PLANTED = {
    "toxic": {"mutual": 0.23, "child_follows_parent": 0.24, "parent_follows_child": 0.22, "none": 0.30},
    "nontoxic": {"mutual": 0.12, "child_follows_parent": 0.158, "parent_follows_child": 0.10, "none": 0.18},
}

TOXIC_WORDS = ("idiot", "stupid", "moron", "trash", "pathetic", "loser")
PLAIN_WORDS = ("news", "vote", "policy", "today", "read", "agree", "think", "story", "people", "report")


class InvalidConfig(ValueError):
    pass


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_conversations: int = 100
    n_users: int = 2000
    n_communities: int = 20
    n_tracked: int = 5
    p_within: float = 0.15
    p_between: float = 0.002
    reciprocity: float = 0.3
    min_replies: int = 2
    mean_extra_replies: float = 12.0
    root_weight: float = 2.0
    recency_weight: float = 2.0
    repeat_prob: float = 0.3
    mean_gap: float = 60.0
    root_toxic_rate: float = 0.2
    planted: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_PLANTED)))
    embeddedness_factors: list = field(default_factory=list)
    structure_effect: float = 0.0
    content_effect: float = 0.0
    effect_onset: int = 0
    follower_log_mean: float = 5.0
    follower_log_sd: float = 2.0
    n_domains: int = 40
    url_rate: float = 0.3
    violation_rate: float = 0.0
    threshold: float = DEFAULT_THRESHOLD

    def validate(self):
        probs = [self.p_within, self.p_between, self.reciprocity,
                 self.repeat_prob, self.root_toxic_rate, self.url_rate, self.violation_rate]
        for key in ("toxic", "nontoxic"):
            if set(self.planted.get(key, {})) != set(EDGE_TYPES):
                raise InvalidConfig(f"planted[{key!r}] must cover {EDGE_TYPES}")
            probs.extend(self.planted[key].values())
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise InvalidConfig("probabilities must lie in [0, 1]")
        if not 0.0 <= self.structure_effect < 1.0 or not 0.0 <= self.content_effect < 1.0:
            raise InvalidConfig("effects must lie in [0, 1)")
        if self.n_conversations < 0 or self.n_users < 2 or self.n_communities < 1:
            raise InvalidConfig("bad sizes")
        if self.effect_onset < 0:
            raise InvalidConfig("effect_onset must be >= 0")
        if self.n_tracked < 1 or self.min_replies < 1 or self.mean_gap <= 0:
            raise InvalidConfig("bad sizes")
        if any(f < 0 for f in self.embeddedness_factors):
            raise InvalidConfig("embeddedness factors must be nonnegative")
        return self

    @classmethod
    def from_dict(cls, d) -> "GeneratorConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown config keys {sorted(extra)}")
        return cls(**d).validate()

    @classmethod
    def from_file(cls, path) -> "GeneratorConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SynthCorpus:
    posts: list
    snapshots: dict
    alignment: dict
    tracked: list
    latents: dict
    config: GeneratorConfig

    def snapshot_store(self) -> SnapshotStore:
        return SnapshotStore(self.snapshots)


def _edge_type(friends, parent_user, child_user) -> str:
    c2p = parent_user in friends[child_user]
    p2c = child_user in friends[parent_user]
    if c2p and p2c:
        return "mutual"
    if c2p:
        return "child_follows_parent"
    if p2c:
        return "parent_follows_child"
    return "none"


def _population(cfg: GeneratorConfig, rng):
    n = cfg.n_users
    community = rng.integers(0, cfg.n_communities, n)
    same = community[:, None] == community[None, :]
    prob = np.where(same, cfg.p_within, cfg.p_between)
    follows = rng.random((n, n)) < prob
    np.fill_diagonal(follows, False)
    back = (rng.random((n, n)) < cfg.reciprocity) & follows.T
    follows |= back
    np.fill_diagonal(follows, False)
    return community, follows


def generate(cfg: GeneratorConfig) -> SynthCorpus:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    community, follows = _population(cfg, rng)
    n = cfg.n_users
    users = [f"u{i:05d}" for i in range(n)]
    tracked = [f"news{i}" for i in range(cfg.n_tracked)]
    friends = {users[i]: frozenset(users[j] for j in np.nonzero(follows[i])[0]) for i in range(n)}
    members = [np.nonzero(community == c)[0] for c in range(cfg.n_communities)]

    in_deg = follows.sum(axis=0)
    extra = np.floor(np.exp(rng.normal(cfg.follower_log_mean, cfg.follower_log_sd, n))).astype(int)
    snapshots = {
        users[i]: [Snapshot(0, friends[users[i]], int(in_deg[i] + extra[i]), len(friends[users[i]]))]
        for i in range(n)
    }
    for t in tracked:
        friends[t] = frozenset()
        snapshots[t] = [Snapshot(0, frozenset(), 10 ** 7, 0)]

    domain_score = np.round(rng.uniform(-1, 1, cfg.n_domains), 3)
    domains = [f"site{i}.example" for i in range(cfg.n_domains)]
    lean = rng.uniform(-1, 1, cfg.n_communities)
    user_domains = {}
    for i in range(n):
        k = rng.poisson(1.0)
        if k == 0:
            continue
        w = np.exp(-4 * np.abs(domain_score - lean[community[i]]))
        user_domains[users[i]] = [domains[j] for j in rng.choice(cfg.n_domains, size=k, p=w / w.sum())]

    planted = cfg.planted
    emb_f = cfg.embeddedness_factors
    posts, latents = [], {}
    t0 = 1_500_000_000
    for c in range(cfg.n_conversations):
        crng = np.random.default_rng([cfg.seed, c])
        # cohesion: share of participants drawn from one community; heat: content temperature
        cohesion, heat = float(crng.random()), float(crng.random())
        latents[f"c{c:05d}"] = {"cohesion": cohesion, "heat": heat}
        mult = (1 + cfg.structure_effect * (1 - 2 * cohesion)) * (1 + cfg.content_effect * (2 * heat - 1))

        home = members[int(crng.integers(cfg.n_communities))]
        if not home.size:
            home = np.arange(n)

        def draw_user():
            if crng.random() < cohesion:
                return users[int(crng.choice(home))]
            return users[int(crng.integers(n))]
        tracked_acct = tracked[int(crng.integers(cfg.n_tracked))]
        if crng.random() < 0.5:
            root_author, mentions = tracked_acct, ()
        else:
            root_author, mentions = draw_user(), (tracked_acct,)

        violation = cfg.violation_rate and crng.random() < cfg.violation_rate
        n_replies = cfg.min_replies + int(crng.geometric(1.0 / (1.0 + cfg.mean_extra_replies)) - 1)
        if violation:
            n_replies = int(crng.integers(0, 3))

        def score_for(toxic: bool) -> float:
            if cfg.content_effect:
                a, b = 2.0 + 2.0 * heat, 4.0 - 2.0 * heat
            else:
                a, b = 2.0, 3.0
            u = crng.beta(a, b)
            lo, hi = (cfg.threshold, 1.0) if toxic else (0.0, cfg.threshold)
            return round(lo + (hi - lo) * (0.001 + 0.998 * u), 6)

        def text_for(toxic: bool) -> str:
            words = list(crng.choice(PLAIN_WORDS, size=4))
            if toxic:
                words.insert(int(crng.integers(0, 5)), str(crng.choice(TOXIC_WORDS)))
            return " ".join(words)

        def domains_for(author):
            doms = user_domains.get(author)
            if doms and crng.random() < cfg.url_rate:
                return (doms[int(crng.integers(len(doms)))],)
            return ()

        root_toxic = bool(crng.random() < min(1.0, cfg.root_toxic_rate * (1.0 if cfg.effect_onset else mult)))
        cid = f"c{c:05d}"
        tree = [Post(id=f"{cid}-0000", author=root_author, parent=None, time=t0 + c * 3600,
                     text=text_for(root_toxic), toxicity=score_for(root_toxic),
                     url_domains=domains_for(root_author), mentions=mentions)]
        toxic = [root_toxic]
        participants = [root_author]
        now = tree[0].time
        rw = cfg.recency_weight * (1.0 + 2.0 * cohesion)
        repeat = cfg.repeat_prob * (0.5 + cohesion)
        for r in range(1, n_replies + 1):
            m = len(tree)
            age = np.arange(m)[::-1]
            w = 1.0 + rw / (1.0 + age)
            w[0] += cfg.root_weight * (2.0 - 1.5 * cohesion)
            parent_i = int(crng.choice(m, p=w / w.sum()))
            parent = tree[parent_i]
            if violation:
                author = root_author
            else:
                author = parent.author
                for _ in range(20):
                    if crng.random() < repeat and len(participants) > 1:
                        author = participants[int(crng.integers(len(participants)))]
                    else:
                        author = draw_user()
                    if author != parent.author:
                        break
            et = _edge_type(friends, parent.author, author)
            p = planted["toxic" if toxic[parent_i] else "nontoxic"][et]
            if emb_f:
                common = len(friends[author] & friends[parent.author])
                b = 0 if common == 0 else min(len(emb_f) - 1, 1 + int(math.log2(common)))
                p *= emb_f[b]
            if r > cfg.effect_onset:
                p *= mult
            p = min(1.0, p)
            is_toxic = bool(crng.random() < p)
            now += max(1, int(round(crng.exponential(cfg.mean_gap))))
            tree.append(Post(id=f"{cid}-{r:04d}", author=author, parent=parent.id, time=now,
                             text=text_for(is_toxic), toxicity=score_for(is_toxic),
                             url_domains=domains_for(author)))
            toxic.append(is_toxic)
            if author not in participants:
                participants.append(author)
        posts.extend(tree)

    alignment = {d: float(s) for d, s in zip(domains, domain_score)}
    return SynthCorpus(posts, snapshots, alignment, tracked, latents, cfg)


def write_corpus(corpus: SynthCorpus, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "posts.jsonl"), "w", encoding="utf-8") as fh:
        for p in sorted(corpus.posts, key=lambda p: p.order_key):
            fh.write(json.dumps(post_to_record(p), sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "snapshots.jsonl"), "w", encoding="utf-8") as fh:
        for user in sorted(corpus.snapshots):
            for s in corpus.snapshots[user]:
                fh.write(json.dumps(snapshot_to_record(user, s), sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "alignment.tsv"), "w", encoding="utf-8") as fh:
        for d in sorted(corpus.alignment):
            fh.write(f"{d}\t{corpus.alignment[d]}\n")
    with open(os.path.join(out_dir, "tracked.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(corpus.tracked) + "\n")
    with open(os.path.join(out_dir, "synth_config.json"), "w", encoding="utf-8") as fh:
        json.dump(asdict(corpus.config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "stub_terms.tsv"), "w", encoding="utf-8") as fh:
        # four plain words score about 0.12, one toxic word lifts that to about 0.88
        for w in TOXIC_WORDS:
            fh.write(f"{w}\t4.0\n")
        for w in PLAIN_WORDS:
            fh.write(f"{w}\t-0.5\n")
