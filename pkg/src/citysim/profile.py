"""Static agent profiles and their prompt rendering."""
from __future__ import annotations

from dataclasses import asdict, dataclass

GENDERS = ("female", "male")
OCCUPATIONS = (
    "office worker", "service worker", "healthcare worker", "teacher",
    "construction worker", "self-employed", "student", "retiree", "unemployed",
)
EDUCATIONS = ("primary", "secondary", "bachelor", "master", "doctorate")
AGE_BANDS = ((18, 29), (30, 39), (40, 49), (50, 59), (60, 69), (70, 99))

# occupations whose daily plan contains a work window
WORKING = frozenset(OCCUPATIONS) - {"student", "retiree", "unemployed"}

PERSONA_FIELDS = ("age_band", "gender", "occupation", "education", "income_quintile")

_LIFESTYLE = {
    "office worker": "Weekdays revolve around a desk job with fixed hours, a quick lunch near the office "
                     "and errands squeezed into the evening commute.",
    "service worker": "Shifts in shops and restaurants mean irregular hours, long stretches on foot "
                      "and meals grabbed wherever is cheap and close.",
    "healthcare worker": "Long hospital shifts leave little slack, so outings are short, practical "
                         "and usually close to home or the clinic.",
    "teacher": "School days start early; afternoons go to grading, and free time tends toward "
               "parks, libraries and family meals.",
    "construction worker": "Early starts at changing work sites, hearty breakfasts and a preference "
                           "for familiar neighbourhood spots after work.",
    "self-employed": "Flexible but busy days mixing client meetings, cafes used as offices and "
                     "errands done whenever a gap opens up.",
    "student": "Days are built around classes and study sessions, with cheap food, libraries and "
               "social outings with classmates in the evening.",
    "retiree": "Unhurried days with morning walks, local markets, regular visits to clinics and "
               "leisurely afternoons in familiar places.",
    "unemployed": "Days are loosely structured around job searching, household errands and "
                  "low-cost leisure close to home.",
}

_INCOME_WORDS = {1: "a tight budget", 2: "a modest budget", 3: "a middle income",
                 4: "a comfortable income", 5: "a high income"}


def age_band(age: int) -> str:
    for lo, hi in AGE_BANDS:
        if lo <= age <= hi:
            return f"{lo}-{hi}"
    if age < AGE_BANDS[0][0]:
        return f"0-{AGE_BANDS[0][0] - 1}"
    raise ValueError(f"age out of range: {age}")


@dataclass(frozen=True)
class StaticProfile:
    agent_id: int
    age: int
    gender: str
    occupation: str
    education: str
    income_quintile: int
    home_block: str

    def __post_init__(self):
        if self.income_quintile not in (1, 2, 3, 4, 5):
            raise ValueError(f"income_quintile must be in 1..5, got {self.income_quintile}")
        if self.age < 0:
            raise ValueError("age must be non-negative")

    @property
    def persona(self) -> tuple:
        """The attributes that describe *who* the agent is, minus identity and home."""
        return (age_band(self.age), self.gender, self.occupation, self.education,
                self.income_quintile)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StaticProfile":
        return cls(
            agent_id=int(d["agent_id"]), age=int(d["age"]), gender=d["gender"],
            occupation=d["occupation"], education=d["education"],
            income_quintile=int(d["income_quintile"]), home_block=str(d["home_block"]),
        )


def persona_dict(persona: tuple) -> dict:
    return dict(zip(PERSONA_FIELDS, persona))


def render_persona_lines(persona: tuple) -> str:
    """``key: value`` lines for the persona attributes."""
    return "\n".join(f"{k}: {v}" for k, v in zip(PERSONA_FIELDS, persona))


def render_profile(p: StaticProfile) -> str:
    """Static (input) section of an agent prompt: attributes plus a short bio."""
    lifestyle = _LIFESTYLE.get(p.occupation, "")
    bio = (f"This resident is {p.age} years old, identifies as {p.gender}, works as "
           f"{_article(p.occupation)} {p.occupation} with {p.education} education and lives on "
           f"{_INCOME_WORDS[p.income_quintile]} (income quintile {p.income_quintile}). {lifestyle}")
    return "\n".join([
        f"age: {p.age}",
        f"age_band: {age_band(p.age)}",
        f"gender: {p.gender}",
        f"occupation: {p.occupation}",
        f"education: {p.education}",
        f"income_quintile: {p.income_quintile}",
        f"bio: {bio}",
    ])


def describe_persona(persona: tuple) -> str:
    """Prose summary used by the mock when it names a group."""
    d = persona_dict(persona)
    return (f"Residents aged {d['age_band']}, {d['gender']}, working as {d['occupation']} "
            f"with {d['education']} education, living on {_INCOME_WORDS[int(d['income_quintile'])]} "
            f"(income quintile {d['income_quintile']}). {_LIFESTYLE.get(d['occupation'], '')}")


def _article(word: str) -> str:
    return "an" if word[:1] in "aeiou" else "a"
