from django.db.models import TextChoices


class OpKind(TextChoices):
	MULT_PLAIN = 'mult_plain', 'Умножение на открытый текст'
	MULT_CIPHER = 'mult_cipher', 'Умножение шифротекстов'
	ROTATE = 'rotate', 'Циклический сдвиг'
	ADD = 'add', 'Сложение шифротекстов'
	ADD_PLAIN = 'add_plain', 'Сложение с открытым текстом'


class CounterField(TextChoices):
	MULT_PLAIN = 'mult_plain'
	MULT_CIPHER = 'mult_cipher'
	ROTATE = 'rotate'
	ADD = 'add'
	ADD_PLAIN = 'add_plain'
	ENCRYPT = 'encrypt'
	DECRYPT = 'decrypt'
	REFRESH_EVENTS = 'refresh_events'
	MPC_BYTES = 'mpc_bytes'


class EncodingKind(TextChoices):
	OUTER = 'outer', 'По столбцам'
	INNER = 'inner', 'По строкам'
	DIAGONAL = 'diagonal', 'По диагоналям'
	INNER_COMPACTED = 'inner_compacted', 'По строкам, блоками'


class ScoreLayout(TextChoices):
	PREFILL_ALIGNED = 'prefill_aligned', 'Подряд с нулевого слота'
	BLOCK_ALIGNED = 'block_aligned', 'В начале блоков'


class CacheSegment(TextChoices):
	PREFILL_K = 'prefill_k'
	PREFILL_V = 'prefill_v'
	AUTO_K = 'auto_k'
	AUTO_V = 'auto_v'


class Method(TextChoices):
	GAZELLE = 'Gazelle'
	IRON = 'IRON'
	BOLT = 'BOLT'
	THOR = 'THOR'
	CRYPTOGEN = 'CryptoGen'


class Stage(TextChoices):
	PREFILL = 'Prefill', 'Предзаполнение'
	GEN = 'Gen', 'Генерация'
	TOTAL = 'Total', 'Итого'


class Component(TextChoices):
	CTPT = 'ctpt', 'Шифротекст × открытый текст'
	CTCT = 'ctct', 'Шифротекст × шифротекст'
	NONLINEAR = 'nonlinear', 'Нелинейные протоколы'
	CACHE = 'cache', 'Обслуживание кэша'


class CellStatus(TextChoices):
	REPRODUCED = 'reproduced', 'Совпадает с таблицей'
	REPORTED_ONLY = 'reported-only', 'Только опубликованное значение'
	FORMULA = 'formula', 'Значение формулы'


class Order(TextChoices):
	CONST = 'O(1)'
	LOG_D = 'O(log d)'
	D = 'O(d)'
	K = 'O(k)'
	K2 = 'O(k^2)'
	M2 = 'O(m^2)'
	NA = 'n/a'


class Direction(TextChoices):
	TO_CLIENT = 'server->client'
	TO_SERVER = 'client->server'


class ReportFormat(TextChoices):
	JSON = 'json'
	CSV = 'csv'
	MARKDOWN = 'md'


class Message(TextChoices):
	MODULUS_NOT_PRIME = 'Модуль открытого текста должен быть простым'
	MODULUS_NOT_NTT = 'Модуль открытого текста должен быть сравним с 1 по модулю 2n'
	SLOTS_NOT_POWER = 'Число слотов должно быть степенью двойки'
	NOISE_COST_MISSING = 'Не задана стоимость шума для операции'
	BUDGET_NEGATIVE = 'Бюджет шума не может быть отрицательным'
	THRESHOLD_ABOVE_BUDGET = 'Порог обновления должен быть меньше начального бюджета шума'
	BUDGET_EXHAUSTED = 'Бюджет шума исчерпан'
	DECRYPTION_FAILED = 'Расшифрование невозможно: бюджет шума равен нулю'
	LENGTH_MISMATCH = 'Длина вектора не совпадает с числом слотов'
	SLOT_OVERFLOW = 'Данные не помещаются в слоты шифротекста'
	SHAPE_MISMATCH = 'Размерности не согласованы'
	NOT_POWER_OF_TWO = 'Размер блока должен быть степенью двойки и делить число слотов'
	UNKNOWN_ENCODING = 'Неподдерживаемый тип упаковки'
	NOT_ENCRYPTED = 'Ожидалась зашифрованная матрица'
	PLAIN_WEIGHTS = 'Веса должны быть открытой матрицей в диагональной упаковке'
	MISALIGNED_TOKEN = 'Вектор токена должен занимать слоты 0..d-1'
	FIXED_POINT_HEADROOM = 'Модуль слишком мал для выбранной дробной точности'
	SHARE_LENGTH = 'Длины долей не совпадают'
	SHARE_MODULUS = 'Доли принадлежат разным кольцам'
	BAD_MAGIC = 'Неверная сигнатура файла матрицы'
	TRUNCATED_FILE = 'Файл матрицы обрезан'
	WEIGHT_SHAPE = 'Форма весов не совпадает с конфигурацией'
	WEIGHT_MISSING = 'В манифесте нет весов'
	HIDDEN_NOT_DIVISIBLE = 'Размер скрытого слоя не делится на число голов'
	SEQUENCE_TOO_LONG = 'Последовательность длиннее max_seq'
	TOKEN_OUT_OF_VOCAB = 'Токен вне словаря'
	EMPTY_PROMPT = 'Пустой запрос'
	UNKNOWN_METHOD = 'Неизвестный метод'
	INVALID_DIMS = 'Размерности должны быть положительными'
	CACHE_MISMATCH = 'Кэш не совпадает с моделью'
	DIMS_MISMATCH = 'Размерности не совпадают с параметрами запуска'
	VERIFY_PASSED = 'Проверка пройдена'
	VERIFY_FAILED = 'Проверка не пройдена'
