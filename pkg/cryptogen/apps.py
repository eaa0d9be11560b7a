from django.apps import AppConfig


class CryptoGenConfig(AppConfig):
	default_auto_field = 'django.db.models.BigAutoField'
	name = 'cryptogen'
	verbose_name = "Защищённая генерация"
