"""
Иерархия исключений likertnet и коды выхода CLI
"""

from typing import Iterable


class LikertNetError(Exception):
    """Базовое исключение приложения"""
    exit_code = 3


class UsageError(LikertNetError):
    """Неверные аргументы командной строки"""
    exit_code = 1


class ConfigError(LikertNetError):
    """Некорректная конфигурация запуска"""
    exit_code = 1


class DataError(LikertNetError):
    """Ошибка во входных данных"""
    exit_code = 2


class NumericalError(LikertNetError):
    """Численный сбой при оценивании"""
    exit_code = 3


class MissingFileError(DataError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"Файл не найден: {self.path}")


class HeaderMismatchError(DataError):
    def __init__(self, absent: Iterable[str], extra: Iterable[str]):
        self.absent = sorted(absent)
        self.extra = sorted(extra)
        super().__init__(
            f"Заголовок CSV не совпадает с кодбуком: отсутствуют {self.absent}, лишние {self.extra}"
        )


class ValueOutOfRangeError(DataError):
    def __init__(self, row: int, column: str, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Значение вне допустимого диапазона: строка {row}, столбец {column}, значение {value!r}")


class UnknownItemError(DataError):
    def __init__(self, abbr: str):
        self.abbr = abbr
        super().__init__(f"Неизвестный пункт анкеты: {abbr}")


class UnknownCovariateError(DataError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Неизвестная ковариата: {name}")


class IncompleteDataError(DataError):
    """Модели принимают только полные наблюдения"""


class InvalidSpecError(DataError):
    """Некорректная спецификация симуляции или кодбук"""


class SingleGroupError(DataError):
    """Для медианного теста нужно минимум две группы"""


class EmptyGroupError(DataError):
    """Группа пуста после удаления пропусков"""


class IncompatibleRunsError(DataError):
    def __init__(self, difference: Iterable[str]):
        self.difference = sorted(difference)
        super().__init__(f"Запуски построены на разных наборах пунктов: {self.difference}")


class TooLargeError(DataError):
    """Слишком много конфигураций для полного перебора"""


class DomainError(DataError, ValueError):
    """Аргумент вне области определения"""


class MonotonicityError(DataError, ValueError):
    """Пороги категорий не возрастают"""


class NonFiniteError(NumericalError):
    """Апостериорная плотность стала не конечной"""
