"""Exception hierarchy shared across the pipeline stages."""


class SkillnetError(Exception):
    """Base class for pipeline errors."""


class CorpusFormatError(SkillnetError):
    """Too many malformed advert rows to trust the input."""


class LexiconError(SkillnetError, ValueError):
    pass


class RegionTableError(SkillnetError, ValueError):
    pass


class VocabularyError(SkillnetError, KeyError):
    def __init__(self, skill):
        super().__init__(skill)
        self.skill = skill

    def __str__(self):
        return f"skill {self.skill!r} is not in the vocabulary"


class DegenerateError(SkillnetError, ValueError):
    """Input whose geometry makes a downstream quantity undefined."""


class ConnectivityError(SkillnetError, ValueError):
    pass


class MissingArtifactError(SkillnetError):
    def __init__(self, artifact, stage):
        super().__init__(f"missing artifact {artifact}; run the `{stage}` subcommand first")
        self.artifact = artifact
        self.stage = stage


class StaleCacheError(SkillnetError):
    pass
